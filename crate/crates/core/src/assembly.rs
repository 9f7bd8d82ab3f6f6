//! Galerkin matrices from one-dimensional factor integrals.
//!
//! Every bilinear form here is `Σ_tiles w_t Σ_out ∫ (L Ψ_a)_out (L Ψ_b)_out`
//! for a first-order operator `L` written as signed factor terms, so an
//! entry is a sum of Hadamard products of `p × p` 1D integral tables, one
//! table per coordinate. Materials are piecewise constant on tiles; each
//! coordinate axis is cut at every tile endpoint and each elementary interval
//! carries its own composite rule.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::fieldtnn::{
    curl_operator, div_operator, mass_operator, FieldTables, Operator, TableAdjoints,
};
use crate::quadrature::{CompositeRule, QuadratureGrid};
use crate::scalar::Real;

/// Axis-aligned box with constant material.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile<T> {
    pub bounds: Vec<(T, T)>,
    pub epsilon: T,
    pub mu: T,
}

#[derive(Clone, Debug)]
struct PlacedTile<T> {
    epsilon: T,
    mu: T,
    spans: Vec<Range<usize>>,
}

/// Elementary quadrature layout shared by every basis group of a domain.
#[derive(Clone, Debug)]
pub struct Layout<T> {
    dim: usize,
    breakpoints: Vec<Vec<T>>,
    /// `rules[j][e]`
    rules: Vec<Vec<CompositeRule<T>>>,
    tiles: Vec<PlacedTile<T>>,
}

impl<T: Real> Layout<T> {
    /// Cuts every axis at all tile endpoints. An elementary interval of
    /// length `ℓ_e` on an axis of extent `ℓ` receives
    /// `max(1, round(panels · ℓ_e / ℓ))` panels of `points` nodes.
    pub fn new(tiles: &[Tile<T>], panels: usize, points: usize) -> Result<Self> {
        let dim = tiles
            .first()
            .map(|t| t.bounds.len())
            .ok_or_else(|| Error::Decomposition("no tiles".into()))?;
        if panels == 0 || points == 0 {
            return Err(Error::InvalidArgument("panels and points must be positive".into()));
        }
        for t in tiles {
            if t.bounds.len() != dim {
                return Err(Error::Decomposition("tiles of mixed dimension".into()));
            }
            if t.bounds.iter().any(|&(a, b)| !(a < b)) {
                return Err(Error::Decomposition("tile with an empty interval".into()));
            }
            if !(t.epsilon > T::zero() && t.mu > T::zero()) {
                return Err(Error::InvalidArgument("materials must be positive".into()));
            }
        }
        let mut breakpoints = Vec::with_capacity(dim);
        let mut rules = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut bp: Vec<T> = tiles
                .iter()
                .flat_map(|t| [t.bounds[j].0, t.bounds[j].1])
                .collect();
            bp.sort_by(|a, b| a.partial_cmp(b).expect("finite bounds"));
            bp.dedup();
            let total = bp[bp.len() - 1] - bp[0];
            let axis = bp
                .windows(2)
                .map(|w| {
                    let share = (T::from_usize_lossy(panels) * (w[1] - w[0]) / total)
                        .round()
                        .to_usize()
                        .unwrap_or(1)
                        .max(1);
                    CompositeRule::new(w[0], w[1], share, points)
                })
                .collect::<Result<Vec<_>>>()?;
            breakpoints.push(bp);
            rules.push(axis);
        }
        let mut layout = Self {
            dim,
            breakpoints,
            rules,
            tiles: Vec::new(),
        };
        layout.tiles = tiles
            .iter()
            .map(|t| {
                Ok(PlacedTile {
                    epsilon: t.epsilon,
                    mu: t.mu,
                    spans: layout.spans(&t.bounds)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(layout)
    }

    /// Single box with `ε = μ = 1`.
    pub fn single_box(bounds: &[(T, T)], panels: usize, points: usize) -> Result<Self> {
        Self::new(
            &[Tile {
                bounds: bounds.to_vec(),
                epsilon: T::one(),
                mu: T::one(),
            }],
            panels,
            points,
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breakpoints(&self, j: usize) -> &[T] {
        &self.breakpoints[j]
    }

    pub fn rules(&self, j: usize) -> &[CompositeRule<T>] {
        &self.rules[j]
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }

    /// Elementary interval ranges covering `bounds`.
    pub fn spans(&self, bounds: &[(T, T)]) -> Result<Vec<Range<usize>>> {
        if bounds.len() != self.dim {
            return Err(Error::Decomposition("box dimension mismatch".into()));
        }
        bounds
            .iter()
            .enumerate()
            .map(|(j, &(a, b))| {
                let find = |x: T| {
                    self.breakpoints[j].iter().position(|&v| v == x).ok_or_else(|| {
                        Error::Decomposition(format!(
                            "box endpoint {x} on axis {j} is not a tile endpoint"
                        ))
                    })
                };
                let (s, e) = (find(a)?, find(b)?);
                if s >= e {
                    return Err(Error::Decomposition("empty box".into()));
                }
                Ok(s..e)
            })
            .collect()
    }

    /// Concatenated rules over `spans`.
    pub fn grid(&self, spans: &[Range<usize>]) -> Result<QuadratureGrid<T>> {
        let axes = spans
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let parts: Vec<&CompositeRule<T>> = self.rules[j][r.clone()].iter().collect();
                CompositeRule::concat(&parts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadratureGrid::new(axes))
    }

    fn offset(&self, j: usize, span: &Range<usize>, e: usize) -> usize {
        self.rules[j][span.start..e].iter().map(CompositeRule::len).sum()
    }

    fn shared_tiles(&self, a: &[Range<usize>], b: &[Range<usize>]) -> Vec<usize> {
        let inside = |t: &Range<usize>, s: &Range<usize>| s.start <= t.start && t.end <= s.end;
        (0..self.tiles.len())
            .filter(|&t| {
                let tile = &self.tiles[t];
                (0..self.dim).all(|j| inside(&tile.spans[j], &a[j]) && inside(&tile.spans[j], &b[j]))
            })
            .collect()
    }
}

/// Factor tables of one basis group together with its support.
#[derive(Clone, Copy, Debug)]
pub struct GroupView<'a, T> {
    pub tables: &'a FieldTables<T>,
    pub spans: &'a [Range<usize>],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// `(μ⁻¹ ∇×Ψ_a, ∇×Ψ_b)`
    Stiffness,
    /// `(ε Ψ_a, Ψ_b)`
    Mass,
    /// `(∇·(εΨ_a), ∇·(εΨ_b))` with `ε` constant per tile
    DivGram,
}

impl Form {
    pub const ALL: [Form; 3] = [Form::Stiffness, Form::Mass, Form::DivGram];

    pub fn operator(self, dim: usize) -> Operator {
        match self {
            Form::Stiffness => curl_operator(dim),
            Form::Mass => mass_operator(dim),
            Form::DivGram => div_operator(dim),
        }
    }

    fn weight<T: Real>(self, tile: &PlacedTile<T>) -> T {
        match self {
            Form::Stiffness => T::one() / tile.mu,
            Form::Mass => tile.epsilon,
            Form::DivGram => tile.epsilon * tile.epsilon,
        }
    }
}

#[inline]
fn slot(component: usize, derivative: bool) -> usize {
    2 * component + usize::from(derivative)
}

/// Term pairs of a form as `(coefficient sign, per-coordinate slot pairs)`.
fn term_pairs(form: Form, dim: usize) -> Vec<(i8, Vec<(usize, usize)>)> {
    let mut out = Vec::new();
    for terms in form.operator(dim) {
        for ta in &terms {
            for tb in &terms {
                let slots = (0..dim)
                    .map(|j| {
                        (
                            slot(ta.component, ta.derivative == Some(j)),
                            slot(tb.component, tb.derivative == Some(j)),
                        )
                    })
                    .collect();
                out.push((ta.sign * tb.sign, slots));
            }
        }
    }
    out
}

/// 1D integrals `∫ f_a f_b` over every elementary interval shared by two
/// groups, for every slot pair a set of forms needs. A slot is a component
/// together with a value/derivative flag.
#[derive(Clone, Debug)]
pub struct IntegralTables<T> {
    dim: usize,
    nslots: usize,
    /// `entries[j]`: `(e, tables indexed by a * nslots + b)`
    entries: Vec<Vec<(usize, Vec<Option<Matrix<T>>>)>>,
}

impl<T: Real> IntegralTables<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `∫_{I_e} f_a f_b` on coordinate `j`; `None` if not built.
    pub fn get(&self, j: usize, e: usize, a: usize, b: usize) -> Option<&Matrix<T>> {
        self.entries[j]
            .iter()
            .find(|(ee, _)| *ee == e)
            .and_then(|(_, t)| t[a * self.nslots + b].as_ref())
    }

    /// Sum of the tables over a range of elementary intervals.
    fn over(&self, j: usize, span: &Range<usize>, pair: usize) -> Matrix<T> {
        let mut acc: Option<Matrix<T>> = None;
        for (e, tabs) in &self.entries[j] {
            if span.contains(e) {
                let t = tabs[pair].as_ref().expect("slot pair was requested");
                match &mut acc {
                    Some(m) => m.add_assign(t),
                    None => acc = Some(t.clone()),
                }
            }
        }
        acc.expect("tile span inside the shared support")
    }
}

fn slot_row<T: Real>(tables: &FieldTables<T>, s: usize, j: usize) -> &Matrix<T> {
    let t = tables.table(s / 2, j);
    if s % 2 == 1 {
        &t.derivatives
    } else {
        &t.values
    }
}

fn needed_pairs(forms: &[Form], dim: usize) -> Vec<Vec<bool>> {
    let nslots = 2 * dim;
    let mut need = vec![vec![false; nslots * nslots]; dim];
    for &f in forms {
        for (_, slots) in term_pairs(f, dim) {
            for (j, &(a, b)) in slots.iter().enumerate() {
                need[j][a * nslots + b] = true;
            }
        }
    }
    need
}

fn intersect(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    a.start.max(b.start)..a.end.min(b.end).max(a.start.max(b.start))
}

/// Builds the 1D integral tables of the pair `(g, h)` needed by `forms`.
/// Cost `O(p_g p_h Q)` per table.
pub fn build_integral_tables<T: Real>(
    layout: &Layout<T>,
    g: &GroupView<'_, T>,
    h: &GroupView<'_, T>,
    forms: &[Form],
) -> IntegralTables<T> {
    let dim = layout.dim;
    let nslots = 2 * dim;
    let need = needed_pairs(forms, dim);
    let entries = (0..dim)
        .into_par_iter()
        .map(|j| {
            let shared = intersect(&g.spans[j], &h.spans[j]);
            shared
                .map(|e| {
                    let rule = &layout.rules[j][e];
                    let w = rule.weights();
                    let og = layout.offset(j, &g.spans[j], e);
                    let oh = layout.offset(j, &h.spans[j], e);
                    let tabs = (0..nslots * nslots)
                        .into_par_iter()
                        .map(|pair| {
                            if !need[j][pair] {
                                return None;
                            }
                            let (a, b) = (pair / nslots, pair % nslots);
                            let fa = slot_row(g.tables, a, j);
                            let fb = slot_row(h.tables, b, j);
                            Some(weighted_gram(fa, og, fb, oh, w))
                        })
                        .collect();
                    (e, tabs)
                })
                .collect()
        })
        .collect();
    IntegralTables {
        dim,
        nslots,
        entries,
    }
}

/// `Σ_l w_l F[:, oa + l] G[:, ob + l]ᵀ`.
fn weighted_gram<T: Real>(f: &Matrix<T>, oa: usize, g: &Matrix<T>, ob: usize, w: &[T]) -> Matrix<T> {
    let q = w.len();
    let (pf, pg) = (f.rows(), g.rows());
    let mut fw = vec![T::zero(); q];
    let mut out = Matrix::zeros(pf, pg);
    for k in 0..pf {
        let fr = &f.row(k)[oa..oa + q];
        for l in 0..q {
            fw[l] = fr[l] * w[l];
        }
        for m in 0..pg {
            let gr = &g.row(m)[ob..ob + q];
            out[(k, m)] = fw.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        }
    }
    out
}

fn hadamard_assign<T: Real>(acc: &mut Matrix<T>, m: &Matrix<T>) {
    for (a, &b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *a *= b;
    }
}

/// Per-tile, per-coordinate slot-pair tables.
type TileTables<T> = Vec<Vec<Option<Matrix<T>>>>;

fn tile_tables<T: Real>(
    layout: &Layout<T>,
    it: &IntegralTables<T>,
    tile: usize,
    forms: &[Form],
) -> TileTables<T> {
    let need = needed_pairs(forms, layout.dim);
    (0..layout.dim)
        .map(|j| {
            let span = &layout.tiles[tile].spans[j];
            need[j]
                .iter()
                .enumerate()
                .map(|(pair, &n)| n.then(|| it.over(j, span, pair)))
                .collect()
        })
        .collect()
}

/// One block of `form` from prebuilt integral tables.
fn block<T: Real>(
    layout: &Layout<T>,
    tiles: &[(usize, TileTables<T>)],
    form: Form,
    rows: usize,
    cols: usize,
) -> Matrix<T> {
    let dim = layout.dim;
    let nslots = 2 * dim;
    let pairs = term_pairs(form, dim);
    let mut out = Matrix::zeros(rows, cols);
    for (t, tabs) in tiles {
        let w = form.weight(&layout.tiles[*t]);
        for (sign, slots) in &pairs {
            let mut prod = Matrix::from_vec(rows, cols, vec![T::one(); rows * cols]);
            for (j, &(a, b)) in slots.iter().enumerate() {
                hadamard_assign(&mut prod, tabs[j][a * nslots + b].as_ref().expect("needed"));
            }
            out.axpy(w * T::lit(f64::from(*sign)), &prod);
        }
    }
    out
}

/// The `p × p` matrices of the discrete problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSystem<T> {
    /// Curl-curl form with `μ⁻¹`.
    pub s: Matrix<T>,
    /// Mass with `ε`.
    pub m: Matrix<T>,
    /// Divergence Gram with `ε` inside the divergence.
    pub d: Matrix<T>,
    /// Global index of the first basis function of each group.
    pub offsets: Vec<usize>,
    /// `coupled[g][h]`: groups share at least one tile.
    pub coupled: Vec<Vec<bool>>,
}

impl<T: Real> SpectralSystem<T> {
    pub fn size(&self) -> usize {
        self.s.rows()
    }

    pub fn matrix(&self, form: Form) -> &Matrix<T> {
        match form {
            Form::Stiffness => &self.s,
            Form::Mass => &self.m,
            Form::DivGram => &self.d,
        }
    }

    /// Writes `S`, `M`, `D` row-major with sizes and group offsets as JSON.
    pub fn dump<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Integral tables retained from [`assemble_blocks`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct AssemblyCache<T> {
    pairs: Vec<PairCache<T>>,
}

#[derive(Clone, Debug)]
struct PairCache<T> {
    g: usize,
    h: usize,
    tables: IntegralTables<T>,
    tiles: Vec<(usize, TileTables<T>)>,
}

fn offsets<T>(groups: &[GroupView<'_, T>]) -> Vec<usize>
where
    T: Real,
{
    let mut off = Vec::with_capacity(groups.len() + 1);
    let mut acc = 0;
    for g in groups {
        off.push(acc);
        acc += g.tables.rank();
    }
    off.push(acc);
    off
}

fn check_groups<T: Real>(layout: &Layout<T>, groups: &[GroupView<'_, T>]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Decomposition("no basis groups".into()));
    }
    for g in groups {
        if g.tables.dim() != layout.dim || g.spans.len() != layout.dim {
            return Err(Error::Decomposition("group dimension mismatch".into()));
        }
        for (j, span) in g.spans.iter().enumerate() {
            let expected: usize = layout.rules[j][span.clone()].iter().map(CompositeRule::len).sum();
            if g.tables.nodes(j).len() != expected {
                return Err(Error::LengthMismatch {
                    expected,
                    got: g.tables.nodes(j).len(),
                });
            }
        }
    }
    Ok(())
}

fn assemble_forms<T: Real>(
    layout: &Layout<T>,
    groups: &[GroupView<'_, T>],
    forms: &[Form],
) -> Result<(Vec<Matrix<T>>, Vec<Vec<bool>>, AssemblyCache<T>)> {
    check_groups(layout, groups)?;
    let off = offsets(groups);
    let n = off[groups.len()];
    let ng = groups.len();
    let mut coupled = vec![vec![false; ng]; ng];
    let mut jobs = Vec::new();
    for g in 0..ng {
        for h in g..ng {
            let tiles = layout.shared_tiles(groups[g].spans, groups[h].spans);
            if !tiles.is_empty() {
                coupled[g][h] = true;
                coupled[h][g] = true;
                jobs.push((g, h, tiles));
            }
        }
    }
    let pairs: Vec<PairCache<T>> = jobs
        .into_par_iter()
        .map(|(g, h, tiles)| {
            let tables = build_integral_tables(layout, &groups[g], &groups[h], forms);
            let tiles = tiles
                .into_iter()
                .map(|t| (t, tile_tables(layout, &tables, t, forms)))
                .collect();
            PairCache {
                g,
                h,
                tables,
                tiles,
            }
        })
        .collect();
    let mut mats = vec![Matrix::zeros(n, n); forms.len()];
    for pc in &pairs {
        let (pg, ph) = (groups[pc.g].tables.rank(), groups[pc.h].tables.rank());
        for (f, mat) in forms.iter().zip(mats.iter_mut()) {
            let mut b = block(layout, &pc.tiles, *f, pg, ph);
            if pc.g == pc.h {
                b.symmetrize();
            } else {
                mat.set_block(off[pc.h], off[pc.g], &b.transpose());
            }
            mat.set_block(off[pc.g], off[pc.h], &b);
        }
    }
    Ok((mats, coupled, AssemblyCache { pairs }))
}

/// Global `S`, `M`, `D` over all groups. Blocks of groups without a common
/// tile are never computed and stay exactly zero.
pub fn assemble_blocks<T: Real>(
    layout: &Layout<T>,
    groups: &[GroupView<'_, T>],
) -> Result<(SpectralSystem<T>, AssemblyCache<T>)> {
    let (mut mats, coupled, cache) = assemble_forms(layout, groups, &Form::ALL)?;
    let d = mats.pop().expect("three forms");
    let m = mats.pop().expect("three forms");
    let s = mats.pop().expect("three forms");
    let mut off = offsets(groups);
    off.pop();
    Ok((
        SpectralSystem {
            s,
            m,
            d,
            offsets: off,
            coupled,
        },
        cache,
    ))
}

/// A single global matrix.
pub fn assemble_form<T: Real>(
    layout: &Layout<T>,
    groups: &[GroupView<'_, T>],
    form: Form,
) -> Result<Matrix<T>> {
    Ok(assemble_forms(layout, groups, &[form])?.0.pop().expect("one form"))
}

pub fn assemble_mass<T: Real>(layout: &Layout<T>, groups: &[GroupView<'_, T>]) -> Result<Matrix<T>> {
    assemble_form(layout, groups, Form::Mass)
}

pub fn assemble_stiffness<T: Real>(
    layout: &Layout<T>,
    groups: &[GroupView<'_, T>],
) -> Result<Matrix<T>> {
    assemble_form(layout, groups, Form::Stiffness)
}

pub fn assemble_div_gram<T: Real>(
    layout: &Layout<T>,
    groups: &[GroupView<'_, T>],
) -> Result<Matrix<T>> {
    assemble_form(layout, groups, Form::DivGram)
}

/// Adjoints of the global `S`, `M`, `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemAdjoint<T> {
    pub s: Matrix<T>,
    pub m: Matrix<T>,
    pub d: Matrix<T>,
}

impl<T: Real> SystemAdjoint<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            s: Matrix::zeros(n, n),
            m: Matrix::zeros(n, n),
            d: Matrix::zeros(n, n),
        }
    }

    fn get(&self, form: Form) -> &Matrix<T> {
        match form {
            Form::Stiffness => &self.s,
            Form::Mass => &self.m,
            Form::DivGram => &self.d,
        }
    }
}

/// Reverse pass of [`assemble_blocks`]: adjoints of every group's final
/// factor tables.
pub fn assemble_backward<T: Real>(
    layout: &Layout<T>,
    groups: &[GroupView<'_, T>],
    cache: &AssemblyCache<T>,
    adj: &SystemAdjoint<T>,
) -> Vec<TableAdjoints<T>> {
    let dim = layout.dim;
    let nslots = 2 * dim;
    let off = offsets(groups);

    // Adjoints of the elementary tables, per pair.
    let elem_adj: Vec<Vec<Vec<(usize, Vec<Option<Matrix<T>>>)>>> = cache
        .pairs
        .par_iter()
        .map(|pc| {
            let (pg, ph) = (groups[pc.g].tables.rank(), groups[pc.h].tables.rank());
            let mut out: Vec<Vec<(usize, Vec<Option<Matrix<T>>>)>> = pc
                .tables
                .entries
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|(e, _)| (*e, vec![None; nslots * nslots]))
                        .collect()
                })
                .collect();
            for form in Form::ALL {
                let global = adj.get(form);
                let mut a = global.block(off[pc.g], off[pc.h], pg, ph);
                if pc.g == pc.h {
                    a.symmetrize();
                } else {
                    let t = global.block(off[pc.h], off[pc.g], ph, pg).transpose();
                    a.add_assign(&t);
                }
                if a.max_abs() == T::zero() {
                    continue;
                }
                let pairs = term_pairs(form, dim);
                for (t, tabs) in &pc.tiles {
                    let w = form.weight(&layout.tiles[*t]);
                    for (sign, slots) in &pairs {
                        let coef = w * T::lit(f64::from(*sign));
                        for j in 0..dim {
                            let mut g = a.scaled(coef);
                            for (jj, &(sa, sb)) in slots.iter().enumerate() {
                                if jj != j {
                                    hadamard_assign(
                                        &mut g,
                                        tabs[jj][sa * nslots + sb].as_ref().expect("needed"),
                                    );
                                }
                            }
                            let (sa, sb) = slots[j];
                            let span = &layout.tiles[*t].spans[j];
                            for (e, slots_adj) in out[j].iter_mut() {
                                if span.contains(e) {
                                    let entry = &mut slots_adj[sa * nslots + sb];
                                    match entry {
                                        Some(m) => m.add_assign(&g),
                                        None => *entry = Some(g.clone()),
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();

    // Factor-table adjoints, one coordinate at a time.
    let per_coord: Vec<Vec<Vec<(Matrix<T>, Matrix<T>)>>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut acc: Vec<Vec<(Matrix<T>, Matrix<T>)>> = groups
                .iter()
                .map(|g| {
                    (0..dim)
                        .map(|c| {
                            let t = g.tables.table(c, j);
                            (
                                Matrix::zeros(t.rank(), t.len()),
                                Matrix::zeros(t.rank(), t.len()),
                            )
                        })
                        .collect()
                })
                .collect();
            for (pc, pair_adj) in cache.pairs.iter().zip(&elem_adj) {
                let (gv, hv) = (&groups[pc.g], &groups[pc.h]);
                for (e, tabs) in &pair_adj[j] {
                    let w = layout.rules[j][*e].weights();
                    let og = layout.offset(j, &gv.spans[j], *e);
                    let oh = layout.offset(j, &hv.spans[j], *e);
                    for (pair, tbar) in tabs.iter().enumerate() {
                        let Some(tbar) = tbar else { continue };
                        let (a, b) = (pair / nslots, pair % nslots);
                        let fa = slot_row(gv.tables, a, j);
                        let fb = slot_row(hv.tables, b, j);
                        let ga = weighted_product(tbar, fb, oh, w);
                        add_columns(slot_adj(&mut acc[pc.g][a / 2], a), og, &ga);
                        let gb = weighted_product(&tbar.transpose(), fa, og, w);
                        add_columns(slot_adj(&mut acc[pc.h][b / 2], b), oh, &gb);
                    }
                }
            }
            acc
        })
        .collect();

    let mut result: Vec<TableAdjoints<T>> = groups.iter().map(|g| g.tables.zero_adjoints()).collect();
    for (j, coord) in per_coord.into_iter().enumerate() {
        for (g, comps) in coord.into_iter().enumerate() {
            for (c, pair) in comps.into_iter().enumerate() {
                result[g].slots[c][j] = pair;
            }
        }
    }
    result
}

fn slot_adj<T>(pair: &mut (Matrix<T>, Matrix<T>), s: usize) -> &mut Matrix<T> {
    if s % 2 == 1 {
        &mut pair.1
    } else {
        &mut pair.0
    }
}

/// `(A G[:, o..o+q]) ⊙ w` as a `rows(A) × q` matrix.
fn weighted_product<T: Real>(a: &Matrix<T>, g: &Matrix<T>, o: usize, w: &[T]) -> Matrix<T> {
    let q = w.len();
    let mut out = Matrix::zeros(a.rows(), q);
    for k in 0..a.rows() {
        let orow = out.row_mut(k);
        for (m, &akm) in a.row(k).iter().enumerate() {
            if akm == T::zero() {
                continue;
            }
            let grow = &g.row(m)[o..o + q];
            for l in 0..q {
                orow[l] += akm * grow[l];
            }
        }
        for l in 0..q {
            orow[l] *= w[l];
        }
    }
    out
}

fn add_columns<T: Real>(target: &mut Matrix<T>, o: usize, src: &Matrix<T>) {
    for k in 0..src.rows() {
        let row = &mut target.row_mut(k)[o..o + src.cols()];
        for (t, &s) in row.iter_mut().zip(src.row(k)) {
            *t += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldtnn::{FieldTNN, MaskKind, NetworkShape};
    use crate::subnet::{Activation, ClosedForm, TabulatedFactors};
    use std::f64::consts::PI;

    fn tab(forms: Vec<ClosedForm>) -> TabulatedFactors {
        TabulatedFactors::new(forms)
    }

    fn one_group(
        layout: &Layout<f64>,
        field: &FieldTNN<f64>,
    ) -> (FieldTables<f64>, Vec<Range<usize>>) {
        let spans = layout.spans(field.support()).unwrap();
        let grid = layout.grid(&spans).unwrap();
        (field.eval_component_tables(&grid).unwrap(), spans)
    }

    fn system(layout: &Layout<f64>, field: &FieldTNN<f64>) -> SpectralSystem<f64> {
        let (t, spans) = one_group(layout, field);
        assemble_blocks(layout, &[GroupView { tables: &t, spans: &spans }]).unwrap().0
    }

    fn square() -> Layout<f64> {
        Layout::single_box(&[(0.0, 1.0), (0.0, 1.0)], 4, 8).unwrap()
    }

    fn e11() -> Vec<Vec<TabulatedFactors>> {
        vec![
            vec![tab(vec![ClosedForm::cos(-1.0, PI)]), tab(vec![ClosedForm::sin(1.0, PI)])],
            vec![tab(vec![ClosedForm::sin(1.0, PI)]), tab(vec![ClosedForm::cos(1.0, PI)])],
        ]
    }

    fn gradient() -> Vec<Vec<TabulatedFactors>> {
        vec![
            vec![tab(vec![ClosedForm::cos(PI, PI)]), tab(vec![ClosedForm::sin(1.0, PI)])],
            vec![tab(vec![ClosedForm::sin(1.0, PI)]), tab(vec![ClosedForm::cos(PI, PI)])],
        ]
    }

    #[test]
    fn sine_integral_tables() {
        let layout = Layout::single_box(&[(0.0, 1.0), (0.0, 1.0)], 4, 8).unwrap();
        let f = FieldTNN::tabulated(
            vec![(0.0, 1.0), (0.0, 1.0)],
            vec![
                vec![
                    tab(vec![ClosedForm::sin(1.0, PI), ClosedForm::sin(1.0, 2.0 * PI)]),
                    tab(vec![ClosedForm::constant(1.0); 2]),
                ],
                vec![tab(vec![ClosedForm::constant(1.0); 2]), tab(vec![ClosedForm::constant(1.0); 2])],
            ],
        )
        .unwrap();
        let (t, spans) = one_group(&layout, &f);
        let g = GroupView { tables: &t, spans: &spans };
        let it = build_integral_tables(&layout, &g, &g, &Form::ALL);
        let vv = it.get(0, 0, slot(0, false), slot(0, false)).unwrap();
        assert!((vv[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(vv[(0, 1)].abs() < 1e-12);
        let dd = it.get(0, 0, slot(0, true), slot(0, true)).unwrap();
        assert!((dd[(0, 0)] - PI * PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn normalized_factors_have_unit_diagonal() {
        let layout = square();
        let shape = NetworkShape {
            rank: 4,
            hidden: vec![10],
            activation: Activation::Tanh,
        };
        let f = FieldTNN::compact(vec![(0.0, 1.0), (0.0, 1.0)], &shape, 2).unwrap();
        let (t, spans) = one_group(&layout, &f);
        let g = GroupView { tables: &t, spans: &spans };
        let it = build_integral_tables(&layout, &g, &g, &[Form::Mass]);
        for j in 0..2 {
            for c in 0..2 {
                let m = it.get(j, 0, slot(c, false), slot(c, false)).unwrap();
                for k in 0..4 {
                    assert!((m[(k, k)] - 1.0).abs() < 1e-10);
                }
                assert!(m.asymmetry() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_field() {
        let layout = Layout::single_box(&[(0.0, 1.0), (0.0, 1.0)], 1, 2).unwrap();
        let one = || tab(vec![ClosedForm::constant(1.0)]);
        let f = FieldTNN::tabulated(vec![(0.0, 1.0); 2], vec![vec![one(), one()], vec![one(), one()]])
            .unwrap();
        let sys = system(&layout, &f);
        assert!((sys.m[(0, 0)] - 2.0).abs() < 1e-14);
        assert_eq!(sys.s[(0, 0)], 0.0);
        assert_eq!(sys.d[(0, 0)], 0.0);
    }

    #[test]
    fn eigenfunction_rayleigh_quotient() {
        let f = FieldTNN::tabulated(vec![(0.0, 1.0); 2], e11()).unwrap();
        let sys = system(&square(), &f);
        assert!((sys.s[(0, 0)] / sys.m[(0, 0)] - 2.0 * PI * PI).abs() < 1e-8 * 2.0 * PI * PI);
        assert!(sys.d[(0, 0)] < 1e-10);
    }

    #[test]
    fn gradient_field_gram() {
        let f = FieldTNN::tabulated(vec![(0.0, 1.0); 2], gradient()).unwrap();
        let sys = system(&square(), &f);
        assert!(sys.s[(0, 0)] < 1e-10);
        assert!((sys.d[(0, 0)] - PI.powi(4)).abs() < 1e-8 * PI.powi(4));
    }

    #[test]
    fn e10_e01_mass_is_diagonal() {
        // E₁₀ = (0, sin πx₁), E₀₁ = (−sin πx₂, 0)
        let f = FieldTNN::tabulated(
            vec![(0.0, 1.0); 2],
            vec![
                vec![
                    tab(vec![ClosedForm::constant(0.0), ClosedForm::constant(-1.0)]),
                    tab(vec![ClosedForm::constant(1.0), ClosedForm::sin(1.0, PI)]),
                ],
                vec![
                    tab(vec![ClosedForm::sin(1.0, PI), ClosedForm::constant(0.0)]),
                    tab(vec![ClosedForm::constant(1.0), ClosedForm::constant(1.0)]),
                ],
            ],
        )
        .unwrap();
        let sys = system(&square(), &f);
        assert!((sys.m[(0, 0)] - 0.5).abs() < 1e-13);
        assert!((sys.m[(1, 1)] - 0.5).abs() < 1e-13);
        assert!(sys.m[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn material_weights_scale_linearly() {
        let f = FieldTNN::tabulated(vec![(0.0, 1.0); 2], e11()).unwrap();
        let doubled = Layout::new(
            &[Tile {
                bounds: vec![(0.0, 1.0); 2],
                epsilon: 2.0,
                mu: 0.5,
            }],
            4,
            8,
        )
        .unwrap();
        let a = system(&square(), &f);
        let b = system(&doubled, &f);
        assert_eq!(b.m[(0, 0)], 2.0 * a.m[(0, 0)]);
        assert_eq!(b.s[(0, 0)], 2.0 * a.s[(0, 0)]);
    }

    fn lshape_tiles() -> Vec<Tile<f64>> {
        let t = |x: (f64, f64), y: (f64, f64)| Tile {
            bounds: vec![x, y],
            epsilon: 1.0,
            mu: 1.0,
        };
        vec![t((0.0, 1.0), (0.0, 1.0)), t((-1.0, 0.0), (0.0, 1.0)), t((-1.0, 0.0), (-1.0, 0.0))]
    }

    #[test]
    fn lshape_block_pattern() {
        let layout = Layout::new(&lshape_tiles(), 4, 4).unwrap();
        let boxes = [
            vec![(0.0, 1.0), (0.0, 1.0)],
            vec![(-1.0, 0.0), (0.0, 1.0)],
            vec![(-1.0, 0.0), (-1.0, 0.0)],
            vec![(-1.0, 1.0), (0.0, 1.0)],
            vec![(-1.0, 0.0), (-1.0, 1.0)],
        ];
        let shape = NetworkShape {
            rank: 2,
            hidden: vec![6],
            activation: Activation::Sine,
        };
        let fields: Vec<FieldTNN<f64>> = boxes
            .iter()
            .enumerate()
            .map(|(g, b)| FieldTNN::compact(b.clone(), &shape, g as u64).unwrap())
            .collect();
        let evaluated: Vec<_> = fields.iter().map(|f| one_group(&layout, f)).collect();
        let views: Vec<_> = evaluated
            .iter()
            .map(|(t, s)| GroupView { tables: t, spans: s })
            .collect();
        let (sys, _) = assemble_blocks(&layout, &views).unwrap();
        let expected = [
            [true, false, false, true, false],
            [false, true, false, true, true],
            [false, false, true, false, true],
            [true, true, false, true, true],
            [false, true, true, true, true],
        ];
        for g in 0..5 {
            for h in 0..5 {
                assert_eq!(sys.coupled[g][h], expected[g][h], "({g},{h})");
                let b = sys.m.block(2 * g, 2 * h, 2, 2);
                assert_eq!(b.max_abs() > 0.0, expected[g][h]);
            }
        }
        assert_eq!(sys.s.asymmetry(), 0.0);
    }

    #[test]
    fn misaligned_group_rejected() {
        let layout = Layout::new(&lshape_tiles(), 2, 2).unwrap();
        assert!(matches!(
            layout.spans(&[(0.0, 0.5), (0.0, 1.0)]),
            Err(Error::Decomposition(_))
        ));
    }

    #[test]
    fn panels_split_by_length() {
        let layout = Layout::new(&lshape_tiles(), 16, 8).unwrap();
        assert_eq!(layout.rules(0).len(), 2);
        assert_eq!(layout.rules(0)[0].panels(), 8);
        assert_eq!(layout.rules(1)[1].panels(), 8);
    }

    /// Brute-force tensor quadrature of the materialized integrands.
    fn brute(field: &FieldTNN<f64>, t: &FieldTables<f64>, form: Form) -> Matrix<f64> {
        let p = field.rank();
        let (w0, w1) = (t.weights(0), t.weights(1));
        let mut out = Matrix::zeros(p, p);
        let val = |i: usize, j: usize, k: usize, l: usize, d: bool| {
            let tb = t.table(i, j);
            if d {
                tb.derivatives[(k, l)]
            } else {
                tb.values[(k, l)]
            }
        };
        for a in 0..w0.len() {
            for b in 0..w1.len() {
                let w = w0[a] * w1[b];
                let eval = |k: usize| -> Vec<f64> {
                    let c = |i: usize, d0: bool, d1: bool| val(i, 0, k, a, d0) * val(i, 1, k, b, d1);
                    match form {
                        Form::Mass => vec![c(0, false, false), c(1, false, false)],
                        Form::Stiffness => vec![c(1, true, false) - c(0, false, true)],
                        Form::DivGram => vec![c(0, true, false) + c(1, false, true)],
                    }
                };
                for k in 0..p {
                    let fk = eval(k);
                    for m in 0..p {
                        let fm = eval(m);
                        out[(k, m)] += w * fk.iter().zip(&fm).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
        }
        out
    }

    #[test]
    fn factorized_matches_brute_force() {
        let layout = Layout::single_box(&[(0.0, 1.0), (0.0, 2.0)], 2, 6).unwrap();
        let shape = NetworkShape {
            rank: 3,
            hidden: vec![7, 5],
            activation: Activation::Sine,
        };
        let f = FieldTNN::masked(vec![(0.0, 1.0), (0.0, 2.0)], &shape, MaskKind::Sine, 4).unwrap();
        let (t, spans) = one_group(&layout, &f);
        let (sys, _) = assemble_blocks(&layout, &[GroupView { tables: &t, spans: &spans }]).unwrap();
        for form in Form::ALL {
            let b = brute(&f, &t, form);
            let a = sys.matrix(form);
            let scale = b.max_abs();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-11 * scale, "{form:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let layout = Layout::new(&lshape_tiles(), 2, 4).unwrap();
        let boxes = [vec![(0.0, 1.0), (0.0, 1.0)], vec![(-1.0, 1.0), (0.0, 1.0)]];
        let shape = NetworkShape {
            rank: 2,
            hidden: vec![5],
            activation: Activation::Sine,
        };
        let fields: Vec<FieldTNN<f64>> = boxes
            .iter()
            .enumerate()
            .map(|(g, b)| FieldTNN::compact(b.clone(), &shape, 10 + g as u64).unwrap())
            .collect();
        let n = 4;
        let mut adj = SystemAdjoint::zeros(n);
        for (i, v) in adj.s.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        for (i, v) in adj.m.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.61).cos();
        }
        for (i, v) in adj.d.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.23 + 1.0).sin();
        }
        let loss = |fs: &[FieldTNN<f64>]| {
            let ev: Vec<_> = fs.iter().map(|f| one_group(&layout, f)).collect();
            let views: Vec<_> = ev.iter().map(|(t, s)| GroupView { tables: t, spans: s }).collect();
            let (sys, _) = assemble_blocks(&layout, &views).unwrap();
            crate::dense::dot(sys.s.as_slice(), adj.s.as_slice())
                + crate::dense::dot(sys.m.as_slice(), adj.m.as_slice())
                + crate::dense::dot(sys.d.as_slice(), adj.d.as_slice())
        };
        let ev: Vec<_> = fields.iter().map(|f| one_group(&layout, f)).collect();
        let views: Vec<_> = ev.iter().map(|(t, s)| GroupView { tables: t, spans: s }).collect();
        let (_, cache) = assemble_blocks(&layout, &views).unwrap();
        let tadj = assemble_backward(&layout, &views, &cache, &adj);
        for g in 0..2 {
            let grad = fields[g].backward(&ev[g].0, &tadj[g]);
            let p0 = fields[g].params();
            for idx in (0..p0.len()).step_by(7) {
                let h = 1e-6;
                let mut fs = fields.clone();
                let mut pp = p0.clone();
                pp[idx] += h;
                fs[g].set_params(&pp).unwrap();
                let lp = loss(&fs);
                pp[idx] -= 2.0 * h;
                fs[g].set_params(&pp).unwrap();
                let lm = loss(&fs);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - grad[idx]).abs() < 1e-5 * fd.abs().max(1.0),
                    "group {g} param {idx}: {fd} vs {}",
                    grad[idx]
                );
            }
        }
    }
}
