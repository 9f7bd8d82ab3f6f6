//! Composite Gauss–Legendre rules.
//!
//! Every integral in the solver is a product of one-dimensional quadratures,
//! so the only rule needed is a composite Gauss–Legendre rule on an interval
//! split into equal panels. Rules on neighbouring intervals (material
//! interfaces, subdomain boundaries) are glued with [`CompositeRule::concat`].

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre_rule<T: Real>(n: usize) -> Result<(Vec<T>, Vec<T>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("Gauss-Legendre rule needs n >= 1".into()));
    }
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = T::from_usize_lossy(n);
    let half = T::lit(0.5);
    let tol = T::tol(1e-15);
    let two = T::lit(2.0);

    // Roots come in ± pairs; solve for the non-negative half only.
    for i in 0..n.div_ceil(2) {
        let k = T::from_usize_lossy(i);
        // Chebyshev-style guess for the (i+1)-th largest root.
        let mut x = (T::PI() * (k + T::lit(0.75)) / (nf + half)).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= tol {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = two / ((T::one() - x * x) * dp * dp);
        // x descends with i; place symmetric pair.
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = T::zero();
    }
    Ok((nodes, weights))
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    if n == 0 {
        return (T::one(), T::zero());
    }
    for k in 2..=n {
        let kf = T::from_usize_lossy(k);
        let p2 = ((T::lit(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = T::from_usize_lossy(n);
    let d = nf * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// One-dimensional composite rule on `[a, b]` with `panels` equal panels and
/// `points` Gauss–Legendre nodes per panel. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeRule<T> {
    a: T,
    b: T,
    panels: usize,
    points: usize,
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> CompositeRule<T> {
    pub fn new(a: T, b: T, panels: usize, points: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidArgument(format!(
                "degenerate interval [{a}, {b}]"
            )));
        }
        if panels == 0 {
            return Err(Error::InvalidArgument("panel count must be positive".into()));
        }
        let (ref_nodes, ref_weights) = gauss_legendre_rule::<T>(points)?;
        let h = (b - a) / T::from_usize_lossy(panels);
        let half_h = h * T::lit(0.5);
        let mut nodes = Vec::with_capacity(panels * points);
        let mut weights = Vec::with_capacity(panels * points);
        for m in 0..panels {
            let left = a + h * T::from_usize_lossy(m);
            let mid = left + half_h;
            for (&x, &w) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push(mid + half_h * x);
                weights.push(half_h * w);
            }
        }
        Ok(Self {
            a,
            b,
            panels,
            points,
            nodes,
            weights,
        })
    }

    /// Glues rules on abutting intervals `[x0,x1], [x1,x2], …` into one rule
    /// on `[x0, xn]`. The per-panel point count of the result is that of the
    /// first part.
    pub fn concat(parts: &[&CompositeRule<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut out = (*first).clone();
        for w in parts.windows(2) {
            if w[0].b != w[1].a {
                return Err(Error::InvalidArgument(format!(
                    "rules do not abut: {} vs {}",
                    w[0].b, w[1].a
                )));
            }
        }
        for p in &parts[1..] {
            out.nodes.extend_from_slice(&p.nodes);
            out.weights.extend_from_slice(&p.weights);
            out.panels += p.panels;
            out.b = p.b;
        }
        Ok(out)
    }

    #[inline]
    pub fn interval(&self) -> (T, T) {
        (self.a, self.b)
    }

    #[inline]
    pub fn panels(&self) -> usize {
        self.panels
    }

    #[inline]
    pub fn points_per_panel(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_ℓ w_ℓ f_ℓ` for samples aligned with the nodes.
    pub fn integrate(&self, samples: &[T]) -> Result<T> {
        if samples.len() != self.nodes.len() {
            return Err(Error::LengthMismatch {
                expected: self.nodes.len(),
                got: samples.len(),
            });
        }
        Ok(self.weights.iter().zip(samples).map(|(&w, &f)| w * f).sum())
    }

    pub fn integrate_fn(&self, f: impl Fn(T) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Convenience wrapper matching the single-dimension constructor.
pub fn composite_grid<T: Real>(a: T, b: T, panels: usize, points: usize) -> Result<CompositeRule<T>> {
    CompositeRule::new(a, b, panels, points)
}

/// `Σ_ℓ w_ℓ f_ℓ`; rejects misaligned sample vectors.
pub fn integrate_1d<T: Real>(samples: &[T], rule: &CompositeRule<T>) -> Result<T> {
    rule.integrate(samples)
}

/// Tensor-product grid: one composite rule per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid<T> {
    axes: Vec<CompositeRule<T>>,
}

impl<T: Real> QuadratureGrid<T> {
    pub fn new(axes: Vec<CompositeRule<T>>) -> Self {
        Self { axes }
    }

    /// Same panel/point counts on every axis of a box.
    pub fn uniform(bounds: &[(T, T)], panels: usize, points: usize) -> Result<Self> {
        let axes = bounds
            .iter()
            .map(|&(a, b)| CompositeRule::new(a, b, panels, points))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { axes })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axis(&self, j: usize) -> &CompositeRule<T> {
        &self.axes[j]
    }

    pub fn axes(&self) -> &[CompositeRule<T>] {
        &self.axes
    }

    pub fn bounds(&self) -> Vec<(T, T)> {
        self.axes.iter().map(CompositeRule::interval).collect()
    }

    pub fn total_points(&self) -> usize {
        self.axes.iter().map(CompositeRule::len).product()
    }
}
