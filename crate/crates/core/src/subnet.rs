//! One-dimensional multi-output subnetworks.
//!
//! A subnetwork maps a scalar coordinate to `p` factor functions. The forward
//! pass propagates the input tangent alongside the values so that exact
//! input-derivatives come out of the same sweep, and the backward pass
//! differentiates both the value path and the tangent path with respect to
//! the parameters.
//!
//! Optional support handling makes the factors vanish outside `[a, b]`: the
//! input is first clamped with `g(x) = relu(x − a) − relu(x − b) + a` and the
//! outputs are multiplied by `(g(x) − a)(b − g(x))`. Without the polynomial,
//! a cutoff alone zeroes the factor outside `[a, b]` and leaves it untouched
//! inside.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::quadrature::CompositeRule;
use crate::scalar::Real;

/// Rows whose quadrature norm falls at or below this are degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sine,
    Tanh,
    Relu,
}

impl Activation {
    /// `(σ(z), σ'(z), σ''(z))`
    #[inline]
    fn eval<T: Real>(self, z: T) -> (T, T, T) {
        match self {
            Activation::Sine => {
                let (s, c) = z.sin_cos();
                (s, c, -s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d = T::one() - t * t;
                (t, d, -T::lit(2.0) * t * d)
            }
            Activation::Relu => {
                if z > T::zero() {
                    (z, T::one(), T::zero())
                } else {
                    (T::zero(), T::zero(), T::zero())
                }
            }
        }
    }
}

/// `relu(x − a) − relu(x − b) + a`, i.e. `x` clamped to `[a, b]`.
pub fn clamp<T: Real>(x: T, a: T, b: T) -> T {
    let relu = |v: T| v.max(T::zero());
    relu(x - a) - relu(x - b) + a
}

/// Compact-support options for a subnetwork.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportWindow<T> {
    pub a: T,
    pub b: T,
    /// Feed `clamp(x, a, b)` to the network instead of `x`.
    pub clamp: bool,
    /// Multiply outputs by `(u − a)(b − u)` with `u` the (clamped) input.
    pub polynomial: bool,
    /// Zero outside `[a, b]`; implied by `polynomial`.
    #[serde(default)]
    pub cutoff: bool,
}

impl<T: Real> SupportWindow<T> {
    pub fn compact(a: T, b: T) -> Self {
        Self {
            a,
            b,
            clamp: true,
            polynomial: true,
            cutoff: true,
        }
    }

    /// Restriction to `[a, b]` without forcing zeros at the endpoints.
    pub fn cutoff(a: T, b: T) -> Self {
        Self {
            a,
            b,
            clamp: true,
            polynomial: false,
            cutoff: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubnetConfig<T> {
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub activation: Activation,
    pub support: Option<SupportWindow<T>>,
}

impl<T: Real> SubnetConfig<T> {
    pub fn new(hidden: Vec<usize>, outputs: usize, activation: Activation) -> Self {
        Self {
            hidden,
            outputs,
            activation,
            support: None,
        }
    }

    pub fn with_support(mut self, support: SupportWindow<T>) -> Self {
        self.support = Some(support);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "subnetwork needs at least one hidden layer".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        if self.outputs == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        if let Some(s) = &self.support {
            if !(s.a < s.b) {
                return Err(Error::InvalidArgument(format!(
                    "support window [{}, {}] is empty",
                    s.a, s.b
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    /// `N_ℓ × N_{ℓ−1}`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subnetwork<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
    support: Option<SupportWindow<T>>,
    seed: u64,
}

/// Parameter gradient with the same layout as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct SubnetGradient<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> SubnetGradient<T> {
    pub fn flatten(&self) -> Vec<T> {
        flatten_layers(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.as_slice().iter().all(|v| *v == T::zero())
                && l.bias.iter().all(|v| *v == T::zero())
        })
    }
}

fn flatten_layers<T: Real>(layers: &[Layer<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Samples of `p` factor functions and their derivatives at `Q` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTable<T> {
    /// `p × Q`
    pub values: Matrix<T>,
    /// `p × Q`
    pub derivatives: Matrix<T>,
    /// Row norms divided out by [`FactorTable::normalize`], if applied.
    pub norms: Option<Vec<T>>,
}

impl<T: Real> FactorTable<T> {
    pub fn new(values: Matrix<T>, derivatives: Matrix<T>) -> Self {
        assert_eq!(values.rows(), derivatives.rows());
        assert_eq!(values.cols(), derivatives.cols());
        Self {
            values,
            derivatives,
            norms: None,
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.cols() == 0
    }

    /// Quadrature L² norm of every row of `values`.
    pub fn row_norms(&self, weights: &[T]) -> Result<Vec<T>> {
        if weights.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: weights.len(),
            });
        }
        Ok((0..self.rank())
            .map(|k| {
                self.values
                    .row(k)
                    .iter()
                    .zip(weights)
                    .map(|(&v, &w)| w * v * v)
                    .sum::<T>()
                    .sqrt()
            })
            .collect())
    }

    /// Divides values and derivatives row-wise by the quadrature L² norm of
    /// the values. Norms multiply with any previously recorded ones.
    pub fn normalize(&self, rule: &CompositeRule<T>) -> Result<Self> {
        let norms = self.row_norms(rule.weights())?;
        let floor = T::lit(NORM_FLOOR);
        for (row, &n) in norms.iter().enumerate() {
            if !(n > floor) {
                return Err(Error::DegenerateFactor {
                    row,
                    norm: n.as_f64(),
                });
            }
        }
        let mut out = self.clone();
        for (k, &n) in norms.iter().enumerate() {
            let inv = T::one() / n;
            out.values.row_mut(k).iter_mut().for_each(|v| *v *= inv);
            out.derivatives.row_mut(k).iter_mut().for_each(|v| *v *= inv);
        }
        out.norms = Some(match &self.norms {
            Some(prev) => prev.iter().zip(&norms).map(|(&a, &b)| a * b).collect(),
            None => norms,
        });
        Ok(out)
    }

    /// Reverse pass of the latest [`normalize`](Self::normalize): maps
    /// adjoints of the normalized table to adjoints of the raw table.
    /// `self` is the normalized table and `norms` the norms divided out by
    /// that call.
    pub fn normalize_backward(
        &self,
        norms: &[T],
        weights: &[T],
        adj_values: &Matrix<T>,
        adj_derivatives: &Matrix<T>,
    ) -> (Matrix<T>, Matrix<T>) {
        let (p, q) = (self.rank(), self.len());
        let mut raw_v = Matrix::zeros(p, q);
        let mut raw_d = Matrix::zeros(p, q);
        for k in 0..p {
            let n = norms[k];
            let inv = T::one() / n;
            let vrow = self.values.row(k);
            let drow = self.derivatives.row(k);
            let av = adj_values.row(k);
            let ad = adj_derivatives.row(k);
            let dn: T = -(0..q).map(|l| av[l] * vrow[l] + ad[l] * drow[l]).sum::<T>() * inv;
            let out_v = raw_v.row_mut(k);
            for l in 0..q {
                out_v[l] = av[l] * inv + dn * weights[l] * vrow[l];
            }
            let out_d = raw_d.row_mut(k);
            for l in 0..q {
                out_d[l] = ad[l] * inv;
            }
        }
        (raw_v, raw_d)
    }
}

/// Intermediate activations kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    nodes: Vec<T>,
    /// Network input after clamping, `1 × Q`.
    input: Vec<T>,
    /// Input tangent `g'(x)`, `1 × Q`.
    input_tangent: Vec<T>,
    /// Per hidden layer: `(z, tz, h, t)`, each `N_ℓ × Q`.
    hidden: Vec<[Matrix<T>; 4]>,
    /// Raw network output and its tangent before the support factor.
    out: Matrix<T>,
}

impl<T: Real> Subnetwork<T> {
    /// Xavier-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(config: &SubnetConfig<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![1usize];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(config.outputs);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-r, r);
                let data = (0..fan_in * fan_out)
                    .map(|_| T::lit(dist.sample(&mut rng)))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data),
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation: config.activation,
            support: config.support,
            seed,
        })
    }

    /// Builds a network from explicit layers (checkpoints, tests).
    pub fn from_layers(
        layers: Vec<Layer<T>>,
        activation: Activation,
        support: Option<SupportWindow<T>>,
        seed: u64,
    ) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArgument(
                "subnetwork needs at least one hidden layer".into(),
            ));
        }
        if layers[0].weight.cols() != 1 {
            return Err(Error::InvalidArgument("first layer must take one input".into()));
        }
        for w in layers.windows(2) {
            if w[0].weight.rows() != w[1].weight.cols() {
                return Err(Error::InvalidArgument("layer sizes do not chain".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::InvalidArgument("bias length mismatch".into()));
            }
        }
        Ok(Self {
            layers,
            activation,
            support,
            seed,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn support(&self) -> Option<SupportWindow<T>> {
        self.support
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `N_0 = 1, N_1, …, N_L = p`
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![1];
        s.extend(self.layers.iter().map(|l| l.weight.rows()));
        s
    }

    pub fn rank(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<T> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.rows() * l.weight.cols();
            l.weight.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn support_input(&self, x: T) -> (T, T) {
        match self.support {
            Some(s) if s.clamp => {
                let u = clamp(x, s.a, s.b);
                let du = if x >= s.a && x <= s.b { T::one() } else { T::zero() };
                (u, du)
            }
            _ => (x, T::one()),
        }
    }

    /// `(P(u), P'(u))` for the support polynomial, `(1, 0)` when disabled.
    /// `P` is exactly zero once `x` leaves the window, independent of the
    /// rounding in the clamp.
    fn support_factor(&self, x: T, u: T) -> (T, T) {
        match self.support {
            Some(s) if (s.polynomial || s.cutoff) && (x < s.a || x > s.b) => (T::zero(), T::zero()),
            Some(s) if s.polynomial => ((u - s.a) * (s.b - u), s.a + s.b - T::lit(2.0) * u),
            _ => (T::one(), T::zero()),
        }
    }

    /// Runs the network at `nodes`, keeping what the reverse pass needs.
    pub fn forward_tape(&self, nodes: &[T]) -> (FactorTable<T>, Tape<T>) {
        let q = nodes.len();
        let (input, input_tangent): (Vec<T>, Vec<T>) =
            nodes.iter().map(|&x| self.support_input(x)).unzip();
        let mut h = Matrix::from_vec(1, q, input.clone());
        let mut t = Matrix::from_vec(1, q, input_tangent.clone());
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            let mut z = layer.weight.matmul(&h);
            let tz = layer.weight.matmul(&t);
            for (i, &b) in layer.bias.iter().enumerate() {
                z.row_mut(i).iter_mut().for_each(|v| *v += b);
            }
            let mut hn = Matrix::zeros(z.rows(), q);
            let mut tn = Matrix::zeros(z.rows(), q);
            for ((zv, tzv), (hv, tv)) in z
                .as_slice()
                .iter()
                .zip(tz.as_slice())
                .zip(hn.as_mut_slice().iter_mut().zip(tn.as_mut_slice().iter_mut()))
            {
                let (s, ds, _) = self.activation.eval(*zv);
                *hv = s;
                *tv = ds * *tzv;
            }
            hidden.push([z, tz, hn.clone(), tn.clone()]);
            h = hn;
            t = tn;
        }
        let out_layer = &self.layers[last];
        let mut out = out_layer.weight.matmul(&h);
        for (i, &b) in out_layer.bias.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v += b);
        }
        let out_tangent = out_layer.weight.matmul(&t);

        let p = out.rows();
        let mut values = Matrix::zeros(p, q);
        let mut derivatives = Matrix::zeros(p, q);
        for l in 0..q {
            let (pf, dpf) = self.support_factor(nodes[l], input[l]);
            let du = input_tangent[l];
            for k in 0..p {
                let psi = out[(k, l)];
                values[(k, l)] = psi * pf;
                derivatives[(k, l)] = out_tangent[(k, l)] * pf + psi * dpf * du;
            }
        }
        (
            FactorTable::new(values, derivatives),
            Tape {
                nodes: nodes.to_vec(),
                input,
                input_tangent,
                hidden,
                out,
            },
        )
    }

    /// Factor values and exact input-derivatives at `nodes` (unnormalized).
    pub fn forward_with_derivative(&self, nodes: &[T]) -> FactorTable<T> {
        self.forward_tape(nodes).0
    }

    /// Gradient of `Σ adj_values ⊙ values + adj_derivatives ⊙ derivatives`
    /// with respect to every weight and bias.
    pub fn backward_tape(
        &self,
        tape: &Tape<T>,
        adj_values: &Matrix<T>,
        adj_derivatives: &Matrix<T>,
    ) -> SubnetGradient<T> {
        let q = tape.input.len();
        let p = self.rank();
        assert_eq!((adj_values.rows(), adj_values.cols()), (p, q));
        assert_eq!((adj_derivatives.rows(), adj_derivatives.cols()), (p, q));

        // Through the support factor.
        let mut g_out = Matrix::zeros(p, q);
        let mut g_out_t = Matrix::zeros(p, q);
        for l in 0..q {
            let (pf, dpf) = self.support_factor(tape.nodes[l], tape.input[l]);
            let du = tape.input_tangent[l];
            for k in 0..p {
                let av = adj_values[(k, l)];
                let ad = adj_derivatives[(k, l)];
                g_out[(k, l)] = av * pf + ad * dpf * du;
                g_out_t[(k, l)] = ad * pf;
            }
        }

        let mut grads: Vec<Layer<T>> = self.layers.iter().map(Layer::zeros_like).collect();
        let last = self.layers.len() - 1;
        let input_h = Matrix::from_vec(1, q, tape.input.clone());
        let input_t = Matrix::from_vec(1, q, tape.input_tangent.clone());

        let mut g_h = g_out;
        let mut g_t = g_out_t;
        for li in (0..=last).rev() {
            let (prev_h, prev_t) = if li == 0 {
                (&input_h, &input_t)
            } else {
                let rec = &tape.hidden[li - 1];
                (&rec[2], &rec[3])
            };
            // Pre-activation adjoints of this layer.
            let (g_z, g_tz) = if li == last {
                (g_h, g_t)
            } else {
                let [z, tz, _, _] = &tape.hidden[li];
                let mut gz = Matrix::zeros(z.rows(), q);
                let mut gtz = Matrix::zeros(z.rows(), q);
                for idx in 0..z.as_slice().len() {
                    let (_, ds, dds) = self.activation.eval(z.as_slice()[idx]);
                    let gh = g_h.as_slice()[idx];
                    let gt = g_t.as_slice()[idx];
                    gz.as_mut_slice()[idx] = gh * ds + gt * dds * tz.as_slice()[idx];
                    gtz.as_mut_slice()[idx] = gt * ds;
                }
                (gz, gtz)
            };
            let layer = &self.layers[li];
            let grad = &mut grads[li];
            // W̄ = z̄ hᵀ + t̄z tᵀ
            for i in 0..layer.weight.rows() {
                let gzr = g_z.row(i);
                let gtr = g_tz.row(i);
                grad.bias[i] = gzr.iter().copied().sum();
                for j in 0..layer.weight.cols() {
                    let hr = prev_h.row(j);
                    let tr = prev_t.row(j);
                    let mut acc = T::zero();
                    for l in 0..q {
                        acc += gzr[l] * hr[l] + gtr[l] * tr[l];
                    }
                    grad.weight[(i, j)] = acc;
                }
            }
            if li > 0 {
                let wt = layer.weight.transpose();
                g_h = wt.matmul(&g_z);
                g_t = wt.matmul(&g_tz);
            } else {
                g_h = Matrix::zeros(0, 0);
                g_t = Matrix::zeros(0, 0);
            }
        }
        SubnetGradient { layers: grads }
    }

    /// Convenience form of [`backward_tape`](Self::backward_tape) that reruns
    /// the forward pass.
    pub fn backward(
        &self,
        nodes: &[T],
        adj_values: &Matrix<T>,
        adj_derivatives: &Matrix<T>,
    ) -> SubnetGradient<T> {
        let (_, tape) = self.forward_tape(nodes);
        self.backward_tape(&tape, adj_values, adj_derivatives)
    }

    /// Raw network output (before any support factor) at `nodes`; exposed
    /// for diagnostics.
    pub fn raw_output(&self, nodes: &[T]) -> Matrix<T> {
        self.forward_tape(nodes).1.out
    }
}

/// Closed-form one-dimensional factor used to feed known functions through
/// the same pipeline as a trained network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClosedForm {
    /// `amp · sin(freq · x + phase)`
    Sin { amp: f64, freq: f64, phase: f64 },
    /// `amp · cos(freq · x + phase)`
    Cos { amp: f64, freq: f64, phase: f64 },
    Const { value: f64 },
}

impl ClosedForm {
    pub fn sin(amp: f64, freq: f64) -> Self {
        ClosedForm::Sin {
            amp,
            freq,
            phase: 0.0,
        }
    }

    pub fn cos(amp: f64, freq: f64) -> Self {
        ClosedForm::Cos {
            amp,
            freq,
            phase: 0.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        ClosedForm::Const { value }
    }

    /// `(f(x), f'(x))`
    pub fn eval<T: Real>(&self, x: T) -> (T, T) {
        match *self {
            ClosedForm::Sin { amp, freq, phase } => {
                let (a, w) = (T::lit(amp), T::lit(freq));
                let (s, c) = (w * x + T::lit(phase)).sin_cos();
                (a * s, a * w * c)
            }
            ClosedForm::Cos { amp, freq, phase } => {
                let (a, w) = (T::lit(amp), T::lit(freq));
                let (s, c) = (w * x + T::lit(phase)).sin_cos();
                (a * c, -a * w * s)
            }
            ClosedForm::Const { value } => (T::lit(value), T::zero()),
        }
    }
}

/// `p` closed-form factors standing in for a trained subnetwork.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedFactors {
    pub forms: Vec<ClosedForm>,
}

impl TabulatedFactors {
    pub fn new(forms: Vec<ClosedForm>) -> Self {
        Self { forms }
    }

    pub fn rank(&self) -> usize {
        self.forms.len()
    }

    pub fn tabulate<T: Real>(&self, nodes: &[T]) -> FactorTable<T> {
        let (p, q) = (self.forms.len(), nodes.len());
        let mut values = Matrix::zeros(p, q);
        let mut derivatives = Matrix::zeros(p, q);
        for (k, f) in self.forms.iter().enumerate() {
            for (l, &x) in nodes.iter().enumerate() {
                let (v, d) = f.eval(x);
                values[(k, l)] = v;
                derivatives[(k, l)] = d;
            }
        }
        FactorTable::new(values, derivatives)
    }
}

/// Builds a closed-form factor source; the tabulated counterpart of
/// [`Subnetwork::forward_with_derivative`].
pub fn tabulated_mode(forms: Vec<ClosedForm>) -> TabulatedFactors {
    TabulatedFactors::new(forms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::composite_grid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn config(hidden: Vec<usize>, p: usize) -> SubnetConfig<f64> {
        SubnetConfig::new(hidden, p, Activation::Sine)
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let c = config(vec![8, 8], 3);
        let a = Subnetwork::init(&c, 7).unwrap();
        let b = Subnetwork::init(&c, 7).unwrap();
        let d = Subnetwork::init(&c, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), d.params());
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        let r = (6.0f64 / 9.0).sqrt();
        assert!(a.layers()[0].weight.as_slice().iter().all(|w| w.abs() <= r));
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(Subnetwork::init(&config(vec![0], 2), 1).is_err());
        assert!(Subnetwork::init(&config(vec![], 2), 1).is_err());
        assert!(Subnetwork::init(&config(vec![4], 0), 1).is_err());
    }

    #[test]
    fn clamp_cases() {
        assert_eq!(clamp(-0.5, 0.0, 1.0), 0.0);
        assert_eq!(clamp(0.3, 0.0, 1.0), 0.3);
        assert_eq!(clamp(2.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn zero_network_is_zero() {
        let mut net = Subnetwork::init(&config(vec![5, 5], 2), 3).unwrap();
        let n = net.num_params();
        net.set_params(&vec![0.0; n]).unwrap();
        let t = net.forward_with_derivative(&[0.1, 0.5, 0.9]);
        assert!(t.values.as_slice().iter().all(|&v| v == 0.0));
        assert!(t.derivatives.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_neuron_is_sine() {
        let layers = vec![
            Layer {
                weight: Matrix::from_vec(1, 1, vec![1.0]),
                bias: vec![0.0],
            },
            Layer {
                weight: Matrix::from_vec(1, 1, vec![1.0]),
                bias: vec![0.0],
            },
        ];
        let net = Subnetwork::from_layers(layers, Activation::Sine, None, 0).unwrap();
        let t = net.forward_with_derivative(&[0.0, 0.7]);
        assert_eq!(t.values[(0, 0)], 0.0);
        assert_eq!(t.derivatives[(0, 0)], 1.0);
        assert_relative_eq!(t.values[(0, 1)], 0.7f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(t.derivatives[(0, 1)], 0.7f64.cos(), epsilon = 1e-15);
    }

    fn fd_check(net: &Subnetwork<f64>, nodes: &[f64]) {
        let t = net.forward_with_derivative(nodes);
        let h = 1e-5;
        let plus: Vec<f64> = nodes.iter().map(|x| x + h).collect();
        let minus: Vec<f64> = nodes.iter().map(|x| x - h).collect();
        let tp = net.forward_with_derivative(&plus);
        let tm = net.forward_with_derivative(&minus);
        for k in 0..t.rank() {
            for l in 0..nodes.len() {
                let fd = (tp.values[(k, l)] - tm.values[(k, l)]) / (2.0 * h);
                let an = t.derivatives[(k, l)];
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                    "k={k} l={l}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn input_derivative_matches_finite_differences() {
        let nodes: Vec<f64> = (0..17).map(|i| 0.03 + i as f64 * 0.055).collect();
        for act in [Activation::Sine, Activation::Tanh] {
            let c = SubnetConfig::new(vec![12, 9], 4, act);
            fd_check(&Subnetwork::init(&c, 11).unwrap(), &nodes);
            let cs = c.clone().with_support(SupportWindow::compact(0.0, 1.0));
            fd_check(&Subnetwork::init(&cs, 12).unwrap(), &nodes);
        }
    }

    #[test]
    fn compact_support_vanishes_outside() {
        let c = config(vec![10, 10], 3).with_support(SupportWindow::compact(-0.5, 0.25));
        let net = Subnetwork::init(&c, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let outside: Vec<f64> = (0..100)
            .map(|i| {
                if i % 2 == 0 {
                    rng.gen_range(-3.0..-0.5)
                } else {
                    rng.gen_range(0.25..3.0)
                }
            })
            .collect();
        let t = net.forward_with_derivative(&outside);
        assert!(t.values.as_slice().iter().all(|&v| v == 0.0));
        assert!(t.derivatives.as_slice().iter().all(|&v| v == 0.0));
        let ends = net.forward_with_derivative(&[-0.5, 0.25]);
        assert!(ends.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_examples() {
        let g = composite_grid(0.0, 1.0, 4, 8).unwrap();
        let sin = tabulated_mode(vec![ClosedForm::sin(1.0, PI)]).tabulate(g.nodes());
        let n = sin.normalize(&g).unwrap();
        assert_relative_eq!(n.norms.as_ref().unwrap()[0], 0.5f64.sqrt(), epsilon = 1e-13);
        assert_relative_eq!(n.values[(0, 3)], sin.values[(0, 3)] * 2f64.sqrt(), epsilon = 1e-13);
        let again = n.normalize(&g).unwrap();
        for (a, b) in again.values.as_slice().iter().zip(n.values.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = FactorTable::new(Matrix::zeros(1, g.len()), Matrix::zeros(1, g.len()));
        assert!(matches!(zero.normalize(&g), Err(Error::DegenerateFactor { row: 0, .. })));
    }

    #[test]
    fn unit_row_unchanged_by_normalize() {
        let g = composite_grid(0.0f64, 1.0, 2, 6).unwrap();
        let t = tabulated_mode(vec![ClosedForm::constant(1.0)]).tabulate(g.nodes());
        let n = t.normalize(&g).unwrap();
        for (a, b) in n.values.as_slice().iter().zip(t.values.as_slice()) {
            assert!((*a - *b).abs() < 1e-14);
        }
    }

    #[test]
    fn tabulated_examples() {
        let nodes = [0.1, 0.4, 0.8];
        let t = tabulated_mode(vec![
            ClosedForm::sin(1.0, PI),
            ClosedForm::constant(1.0),
            ClosedForm::cos(1.0, 2.0 * PI),
        ])
        .tabulate(&nodes);
        for (l, &x) in nodes.iter().enumerate() {
            assert_eq!(t.values[(0, l)], (PI * x).sin());
            assert_eq!(t.derivatives[(1, l)], 0.0);
            assert_relative_eq!(
                t.derivatives[(2, l)],
                -2.0 * PI * (2.0 * PI * x).sin(),
                epsilon = 1e-14
            );
        }
    }

    fn weighted_sum(t: &FactorTable<f64>, av: &Matrix<f64>, ad: &Matrix<f64>) -> f64 {
        crate::dense::dot(t.values.as_slice(), av.as_slice())
            + crate::dense::dot(t.derivatives.as_slice(), ad.as_slice())
    }

    fn param_fd(
        net: &Subnetwork<f64>,
        nodes: &[f64],
        f: &dyn Fn(&FactorTable<f64>) -> f64,
        idx: usize,
    ) -> f64 {
        let h = 1e-5;
        let mut p = net.params();
        let base = p[idx];
        let mut n2 = net.clone();
        p[idx] = base + h;
        n2.set_params(&p).unwrap();
        let fp = f(&n2.forward_with_derivative(nodes));
        p[idx] = base - h;
        n2.set_params(&p).unwrap();
        let fm = f(&n2.forward_with_derivative(nodes));
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let net = Subnetwork::init(&config(vec![6, 6], 3), 2).unwrap();
        let nodes = [0.2, 0.5];
        let z = Matrix::zeros(3, 2);
        assert!(net.backward(&nodes, &z, &z).is_zero());
    }

    #[test]
    fn single_entry_adjoint_matches_fd() {
        let net = Subnetwork::init(&config(vec![7, 5], 3), 21).unwrap();
        let nodes = [0.15, 0.45, 0.85];
        let mut av = Matrix::zeros(3, 3);
        av[(1, 2)] = 1.0;
        let ad = Matrix::zeros(3, 3);
        let g = net.backward(&nodes, &av, &ad).flatten();
        let f = |t: &FactorTable<f64>| t.values[(1, 2)];
        for idx in (0..net.num_params()).step_by(3) {
            let fd = param_fd(&net, &nodes, &f, idx);
            assert!((g[idx] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{idx}: {} vs {fd}", g[idx]);
        }
    }

    #[test]
    fn sum_of_squares_gradient_matches_fd() {
        let net = Subnetwork::init(&config(vec![6, 6], 2), 4).unwrap();
        let nodes: Vec<f64> = (0..9).map(|i| 0.05 + 0.1 * i as f64).collect();
        let t = net.forward_with_derivative(&nodes);
        let av = t.values.scaled(2.0);
        let ad = Matrix::zeros(2, nodes.len());
        let g = net.backward(&nodes, &av, &ad).flatten();
        let f = |t: &FactorTable<f64>| t.values.as_slice().iter().map(|v| v * v).sum::<f64>();
        for idx in 0..net.num_params() {
            let fd = param_fd(&net, &nodes, &f, idx);
            assert!((g[idx] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{idx}: {} vs {fd}", g[idx]);
        }
    }

    #[test]
    fn normalize_backward_matches_fd() {
        let g = composite_grid(0.0, 1.0, 2, 5).unwrap();
        let net = Subnetwork::init(&config(vec![6], 2), 9).unwrap();
        let raw = net.forward_with_derivative(g.nodes());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let av = Matrix::from_vec(2, g.len(), (0..2 * g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let ad = Matrix::from_vec(2, g.len(), (0..2 * g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let n = raw.normalize(&g).unwrap();
        let norms = n.norms.clone().unwrap();
        let (rv, rd) = n.normalize_backward(&norms, g.weights(), &av, &ad);
        let f = |t: &FactorTable<f64>| weighted_sum(&t.normalize(&g).unwrap(), &av, &ad);
        let h = 1e-6;
        for k in 0..2 {
            for l in 0..g.len() {
                let mut tp = raw.clone();
                tp.values[(k, l)] += h;
                let mut tm = raw.clone();
                tm.values[(k, l)] -= h;
                let fd = (f(&tp) - f(&tm)) / (2.0 * h);
                assert!((fd - rv[(k, l)]).abs() < 1e-6 * fd.abs().max(1.0));
                let mut tp = raw.clone();
                tp.derivatives[(k, l)] += h;
                let mut tm = raw.clone();
                tm.derivatives[(k, l)] -= h;
                let fd = (f(&tp) - f(&tm)) / (2.0 * h);
                assert!((fd - rd[(k, l)]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn backward_matches_fd_for_random_adjoints(
            seed in 0u64..1000,
            act in prop_oneof![Just(Activation::Sine), Just(Activation::Tanh)],
            compact in any::<bool>(),
        ) {
            let mut c = SubnetConfig::new(vec![5, 4], 3, act);
            if compact {
                c = c.with_support(SupportWindow::compact(0.0, 1.0));
            }
            let net = Subnetwork::init(&c, seed).unwrap();
            let nodes = [0.11, 0.37, 0.62, 0.93];
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let av = Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let ad = Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let g = net.backward(&nodes, &av, &ad).flatten();
            let f = |t: &FactorTable<f64>| weighted_sum(t, &av, &ad);
            for idx in 0..net.num_params() {
                let fd = param_fd(&net, &nodes, &f, idx);
                prop_assert!((g[idx] - fd).abs() <= 1e-5 * fd.abs().max(1e-2), "{}: {} vs {}", idx, g[idx], fd);
            }
        }
    }
}
