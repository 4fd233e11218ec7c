//! Feed-forward networks of dense layers and orthogonal-polynomial blocks,
//! evaluated together with their first two input derivatives.
//!
//! Every layer maps a batch of jets `(value, d/dx, d^2/dx^2)` to another
//! batch of jets, so a single forward pass yields the network output and its
//! input derivatives at once. The backward pass is the exact adjoint of that
//! jet computation, which is what lets a loss built from `phi`, `phi'` and
//! `phi''` be differentiated with respect to every parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jets::{chain_backward, chain_forward, tanh_derivs, Jets};
use super::poly::{fill_chebyshev, fill_legendre, PolyFamily};
use crate::error::{Error, Result};

/// Rows per work unit. Fixed so that gradient sums never depend on the
/// number of worker threads.
const CHUNK_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// One layer of a network.
///
/// A polynomial block applies a trainable affine functional
/// `s = w . x + b`, squashes it with `tanh`, and emits polynomial degrees
/// `0..out_width` of the squashed value. With `per_output_affine` every
/// output degree gets its own affine functional instead of sharing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_width: usize,
        out_width: usize,
        activation: Activation,
    },
    LegendreBlock {
        in_width: usize,
        out_width: usize,
        #[serde(default)]
        per_output_affine: bool,
    },
    ChebyshevBlock {
        in_width: usize,
        out_width: usize,
        #[serde(default)]
        per_output_affine: bool,
    },
}

impl LayerSpec {
    pub fn in_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_width, .. }
            | LayerSpec::LegendreBlock { in_width, .. }
            | LayerSpec::ChebyshevBlock { in_width, .. } => in_width,
        }
    }

    pub fn out_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { out_width, .. }
            | LayerSpec::LegendreBlock { out_width, .. }
            | LayerSpec::ChebyshevBlock { out_width, .. } => out_width,
        }
    }

    /// Number of affine functionals (rows of the weight matrix).
    fn affine_rows(&self) -> usize {
        match *self {
            LayerSpec::Dense { out_width, .. } => out_width,
            LayerSpec::LegendreBlock {
                out_width,
                per_output_affine,
                ..
            }
            | LayerSpec::ChebyshevBlock {
                out_width,
                per_output_affine,
                ..
            } => {
                if per_output_affine {
                    out_width
                } else {
                    1
                }
            }
        }
    }

    fn family(&self) -> Option<PolyFamily> {
        match self {
            LayerSpec::Dense { .. } => None,
            LayerSpec::LegendreBlock { .. } => Some(PolyFamily::Legendre),
            LayerSpec::ChebyshevBlock { .. } => Some(PolyFamily::Chebyshev),
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.affine_rows() * (self.in_width() + 1)
    }
}

/// Layer list plus the input interval that is mapped onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureRepr", into = "ArchitectureRepr")]
pub struct Architecture {
    layers: Vec<LayerSpec>,
    domain: [f64; 2],
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ArchitectureRepr {
    layers: Vec<LayerSpec>,
    domain: [f64; 2],
}

impl TryFrom<ArchitectureRepr> for Architecture {
    type Error = Error;

    fn try_from(r: ArchitectureRepr) -> Result<Self> {
        Architecture::new(r.layers, r.domain)
    }
}

impl From<Architecture> for ArchitectureRepr {
    fn from(a: Architecture) -> Self {
        Self {
            layers: a.layers,
            domain: a.domain,
        }
    }
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>, domain: [f64; 2]) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Architecture(
                "a network needs at least one layer".into(),
            ));
        }
        if !(domain[0].is_finite() && domain[1].is_finite() && domain[1] > domain[0]) {
            return Err(Error::Architecture(format!(
                "input domain [{}, {}] is not a proper interval",
                domain[0], domain[1]
            )));
        }
        if layers[0].in_width() != 1 {
            return Err(Error::Architecture(format!(
                "the first layer must take one input, found {}",
                layers[0].in_width()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_width() == 0 || l.out_width() == 0 {
                return Err(Error::Architecture(format!("layer {i} has zero width")));
            }
            if i > 0 && layers[i - 1].out_width() != l.in_width() {
                return Err(Error::Architecture(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.in_width(),
                    i - 1,
                    layers[i - 1].out_width()
                )));
            }
        }
        let mut arch = Self {
            layers,
            domain,
            offsets: Vec::new(),
        };
        arch.compute_offsets();
        Ok(arch)
    }

    fn compute_offsets(&mut self) {
        let mut acc = 0;
        self.offsets = self
            .layers
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.param_count();
                o
            })
            .collect();
        self.offsets.push(acc);
    }

    pub fn builder(domain: [f64; 2]) -> ArchitectureBuilder {
        ArchitectureBuilder {
            domain,
            layers: Vec::new(),
            width: 1,
            per_output_affine: false,
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn domain(&self) -> [f64; 2] {
        self.domain
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_width())
    }

    /// Seeded initialization: weights uniform on `±sqrt(3 / fan_in)`,
    /// biases zero.
    pub fn init_parameters(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count()];
        for (l, layer) in self.layers.iter().enumerate() {
            let fan_in = layer.in_width();
            let bound = (3.0 / fan_in as f64).sqrt();
            let start = self.offsets[l];
            let n_weights = layer.affine_rows() * fan_in;
            for p in &mut params[start..start + n_weights] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    /// Indices of all bias entries in the flat parameter vector.
    pub fn bias_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let start = self.offsets[l] + layer.affine_rows() * layer.in_width();
            out.extend(start..self.offsets[l + 1]);
        }
        out
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: params.len(),
                context: "parameter vector length",
            });
        }
        Ok(())
    }

    /// Evaluates the network and its input derivatives up to `order` (<= 2)
    /// at every point in `xs`, keeping what the backward pass needs.
    pub fn forward_batch(&self, params: &[f64], xs: &[f64], order: usize) -> Result<ForwardPass> {
        self.check_params(params)?;
        if order > 2 {
            return Err(Error::Domain(format!(
                "input derivatives above second order are not supported (asked for {order})"
            )));
        }
        let chunks: Vec<ChunkPass> = xs
            .par_chunks(CHUNK_ROWS)
            .map(|c| self.forward_chunk(params, c, order))
            .collect::<Result<_>>()?;
        let outputs: Vec<Jets> = chunks.iter().map(|c| c.output().clone()).collect();
        Ok(ForwardPass {
            output: Jets::concat(&outputs),
            chunks,
            order,
        })
    }

    /// Value of a scalar objective of the batch outputs and its exact
    /// gradient with respect to all parameters.
    ///
    /// `objective` receives the output jets and returns the objective value
    /// together with its adjoint, i.e. the partial derivative of the
    /// objective with respect to every entry of every jet component.
    pub fn value_and_gradient<F>(
        &self,
        params: &[f64],
        xs: &[f64],
        order: usize,
        objective: F,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&Jets) -> (f64, Jets),
    {
        let pass = self.forward_batch(params, xs, order)?;
        let (value, adjoint) = objective(pass.output());
        let grad = pass.backward(self, params, &adjoint)?;
        Ok((value, grad))
    }

    fn input_jets(&self, xs: &[f64], order: usize) -> Jets {
        let [a, b] = self.domain;
        let scale = 2.0 / (b - a);
        let mut j = Jets::zeros(xs.len(), 1, order);
        for (i, &x) in xs.iter().enumerate() {
            j.value[i] = scale * (x - a) - 1.0;
            if order >= 1 {
                j.d1[i] = scale;
            }
        }
        j
    }

    fn forward_chunk(&self, params: &[f64], xs: &[f64], order: usize) -> Result<ChunkPass> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        inputs.push(self.input_jets(xs, order));
        for (l, layer) in self.layers.iter().enumerate() {
            let x = &inputs[l];
            let p = &params[self.offsets[l]..self.offsets[l + 1]];
            let rows = layer.affine_rows();
            let (w, b) = p.split_at(rows * layer.in_width());
            let z = affine_forward(x, w, b, rows);
            let (out, cache) = match (layer, layer.family()) {
                (LayerSpec::Dense { activation, .. }, _) => match activation {
                    Activation::Identity => (z, LayerCache::Identity),
                    Activation::Tanh => {
                        let y = tanh_forward(&z);
                        (y, LayerCache::Tanh { z })
                    }
                },
                (_, Some(family)) => poly_forward(family, layer.out_width(), rows > 1, z),
                _ => unreachable!(),
            };
            if let Some((idx, v)) = out.first_non_finite() {
                return Err(Error::NonFiniteLayer {
                    layer: l,
                    detail: format!("entry {idx} is {v}"),
                });
            }
            caches.push(cache);
            inputs.push(out);
        }
        Ok(ChunkPass { inputs, caches })
    }

    fn backward_chunk(&self, params: &[f64], pass: &ChunkPass, adjoint: Jets) -> Vec<f64> {
        let mut grad = vec![0.0; self.param_count()];
        let mut ybar = adjoint;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let rows = layer.affine_rows();
            let in_w = layer.in_width();
            let (start, end) = (self.offsets[l], self.offsets[l + 1]);
            let (w, _) = params[start..end].split_at(rows * in_w);
            let zbar = match &pass.caches[l] {
                LayerCache::Identity => ybar,
                LayerCache::Tanh { z } => tanh_backward(z, &pass.inputs[l + 1], &ybar),
                LayerCache::Poly(cache) => cache.backward(&ybar),
            };
            let (gw, gb) = grad[start..end].split_at_mut(rows * in_w);
            ybar = affine_backward(&pass.inputs[l], w, &zbar, gw, gb, l > 0);
        }
        grad
    }
}

/// Incremental construction of an [`Architecture`] that tracks widths.
#[derive(Debug, Clone)]
pub struct ArchitectureBuilder {
    domain: [f64; 2],
    layers: Vec<LayerSpec>,
    width: usize,
    per_output_affine: bool,
}

impl ArchitectureBuilder {
    /// Applies to polynomial blocks added after this call.
    pub fn per_output_affine(mut self, on: bool) -> Self {
        self.per_output_affine = on;
        self
    }

    pub fn dense(mut self, width: usize, activation: Activation) -> Self {
        self.layers.push(LayerSpec::Dense {
            in_width: self.width,
            out_width: width,
            activation,
        });
        self.width = width;
        self
    }

    pub fn legendre(mut self, nodes: usize) -> Self {
        self.layers.push(LayerSpec::LegendreBlock {
            in_width: self.width,
            out_width: nodes,
            per_output_affine: self.per_output_affine,
        });
        self.width = nodes;
        self
    }

    pub fn chebyshev(mut self, nodes: usize) -> Self {
        self.layers.push(LayerSpec::ChebyshevBlock {
            in_width: self.width,
            out_width: nodes,
            per_output_affine: self.per_output_affine,
        });
        self.width = nodes;
        self
    }

    pub fn build(self) -> Result<Architecture> {
        Architecture::new(self.layers, self.domain)
    }
}

/// Everything recorded by [`Architecture::forward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    output: Jets,
    chunks: Vec<ChunkPass>,
    order: usize,
}

impl ForwardPass {
    pub fn output(&self) -> &Jets {
        &self.output
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Gradient of the objective whose adjoint with respect to the outputs
    /// is `adjoint` (same shape and order as [`ForwardPass::output`]).
    pub fn backward(
        &self,
        arch: &Architecture,
        params: &[f64],
        adjoint: &Jets,
    ) -> Result<Vec<f64>> {
        let out = &self.output;
        if adjoint.rows != out.rows || adjoint.cols != out.cols || adjoint.order != out.order {
            return Err(Error::Shape {
                expected: out.rows * out.cols,
                got: adjoint.rows * adjoint.cols,
                context: "adjoint must match the forward output shape and order",
            });
        }
        let mut row = 0;
        let pieces: Vec<(usize, usize)> = self
            .chunks
            .iter()
            .map(|c| {
                let r = c.output().rows;
                row += r;
                (row - r, row)
            })
            .collect();
        let grads: Vec<Vec<f64>> = self
            .chunks
            .par_iter()
            .zip(pieces.par_iter())
            .map(|(c, &(lo, hi))| arch.backward_chunk(params, c, adjoint.slice_rows(lo, hi)))
            .collect();
        let mut total = vec![0.0; arch.param_count()];
        for g in &grads {
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        if let Some(index) = total.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        Ok(total)
    }
}

#[derive(Debug, Clone)]
struct ChunkPass {
    inputs: Vec<Jets>,
    caches: Vec<LayerCache>,
}

impl ChunkPass {
    fn output(&self) -> &Jets {
        self.inputs.last().expect("at least the input jets")
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Identity,
    Tanh { z: Jets },
    Poly(PolyCache),
}

#[derive(Debug, Clone)]
struct PolyCache {
    per_output: bool,
    /// Squashed affine values `u = tanh(s)` with their jets, `rows x c`.
    u: Jets,
    /// Pre-squash jets `s`, `rows x c`.
    s: Jets,
    /// `P_k^{(r)}(u)` for r = 1..=3, each `rows x m`.
    dp: [Vec<f64>; 3],
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn affine_forward(x: &Jets, w: &[f64], b: &[f64], rows: usize) -> Jets {
    let in_w = x.cols;
    let mut z = Jets::zeros(x.rows, rows, x.order);
    for r in 0..=x.order {
        let xin = x.component(r);
        let zout = z.component_mut(r);
        for p in 0..x.rows {
            let xrow = &xin[p * in_w..(p + 1) * in_w];
            for o in 0..rows {
                let bias = if r == 0 { b[o] } else { 0.0 };
                zout[p * rows + o] = bias + dot(xrow, &w[o * in_w..(o + 1) * in_w]);
            }
        }
    }
    z
}

fn affine_backward(
    x: &Jets,
    w: &[f64],
    zbar: &Jets,
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Jets {
    let in_w = x.cols;
    let rows = zbar.cols;
    let mut xbar = if need_input {
        Jets::zeros(x.rows, in_w, x.order)
    } else {
        Jets::zeros(0, in_w, x.order)
    };
    for r in 0..=x.order {
        let xin = x.component(r);
        let zb = zbar.component(r);
        for p in 0..x.rows {
            let xrow = &xin[p * in_w..(p + 1) * in_w];
            let zrow = &zb[p * rows..(p + 1) * rows];
            for (o, &g) in zrow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                axpy(g, xrow, &mut gw[o * in_w..(o + 1) * in_w]);
                if r == 0 {
                    gb[o] += g;
                }
            }
            if need_input {
                let xb = &mut xbar.component_mut(r)[p * in_w..(p + 1) * in_w];
                for (o, &g) in zrow.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, &w[o * in_w..(o + 1) * in_w], xb);
                    }
                }
            }
        }
    }
    xbar
}

fn tanh_forward(z: &Jets) -> Jets {
    let mut y = Jets::zeros(z.rows, z.cols, z.order);
    for i in 0..z.value.len() {
        let (v, t1, t2, _) = tanh_derivs(z.value[i]);
        y.value[i] = v;
        if z.order >= 1 {
            let z2 = if z.order >= 2 { z.d2[i] } else { 0.0 };
            let (y1, y2) = chain_forward(z.order, t1, t2, z.d1[i], z2);
            y.d1[i] = y1;
            if z.order >= 2 {
                y.d2[i] = y2;
            }
        }
    }
    y
}

fn tanh_backward(z: &Jets, y: &Jets, ybar: &Jets) -> Jets {
    let order = z.order;
    let mut zbar = Jets::zeros(z.rows, z.cols, order);
    for i in 0..z.value.len() {
        let v = y.value[i];
        let t1 = 1.0 - v * v;
        let t2 = -2.0 * v * t1;
        let t3 = -2.0 * (t1 * t1 + v * t2);
        let (z1, yb1) = if order >= 1 {
            (z.d1[i], ybar.d1[i])
        } else {
            (0.0, 0.0)
        };
        let (z2, yb2) = if order >= 2 {
            (z.d2[i], ybar.d2[i])
        } else {
            (0.0, 0.0)
        };
        let (a, b, c) = chain_backward(order, t1, t2, t3, z1, z2, ybar.value[i], yb1, yb2);
        zbar.value[i] = a;
        if order >= 1 {
            zbar.d1[i] = b;
        }
        if order >= 2 {
            zbar.d2[i] = c;
        }
    }
    zbar
}

fn poly_forward(family: PolyFamily, m: usize, per_output: bool, s: Jets) -> (Jets, LayerCache) {
    let order = s.order;
    let c = s.cols;
    let rows = s.rows;
    let u = tanh_forward(&s);
    let mut out = Jets::zeros(rows, m, order);
    let mut dp = [
        vec![0.0; rows * m],
        vec![0.0; rows * m],
        vec![0.0; rows * m],
    ];
    let mut v = vec![0.0; m];
    let mut d = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let fill = match family {
        PolyFamily::Legendre => fill_legendre,
        PolyFamily::Chebyshev => fill_chebyshev,
    };
    for p in 0..rows {
        if !per_output {
            fill(u.value[p * c], &mut v, &mut d, 3);
        }
        for k in 0..m {
            let col = if per_output { k } else { 0 };
            if per_output {
                fill(u.value[p * c + col], &mut v[..=k], &mut d, 3);
            }
            let idx = p * m + k;
            let ui = p * c + col;
            out.value[idx] = v[k];
            dp[0][idx] = d[0][k];
            dp[1][idx] = d[1][k];
            dp[2][idx] = d[2][k];
            if order >= 1 {
                let u2 = if order >= 2 { u.d2[ui] } else { 0.0 };
                let (y1, y2) = chain_forward(order, d[0][k], d[1][k], u.d1[ui], u2);
                out.d1[idx] = y1;
                if order >= 2 {
                    out.d2[idx] = y2;
                }
            }
        }
    }
    (
        out,
        LayerCache::Poly(PolyCache {
            per_output,
            u,
            s,
            dp,
        }),
    )
}

impl PolyCache {
    fn backward(&self, ybar: &Jets) -> Jets {
        let order = ybar.order;
        let m = ybar.cols;
        let c = self.u.cols;
        let rows = ybar.rows;
        let mut ubar = Jets::zeros(rows, c, order);
        for p in 0..rows {
            for k in 0..m {
                let col = if self.per_output { k } else { 0 };
                let idx = p * m + k;
                let ui = p * c + col;
                let (u1, yb1) = if order >= 1 {
                    (self.u.d1[ui], ybar.d1[idx])
                } else {
                    (0.0, 0.0)
                };
                let (u2, yb2) = if order >= 2 {
                    (self.u.d2[ui], ybar.d2[idx])
                } else {
                    (0.0, 0.0)
                };
                let (a, b, cc) = chain_backward(
                    order,
                    self.dp[0][idx],
                    self.dp[1][idx],
                    self.dp[2][idx],
                    u1,
                    u2,
                    ybar.value[idx],
                    yb1,
                    yb2,
                );
                ubar.value[ui] += a;
                if order >= 1 {
                    ubar.d1[ui] += b;
                }
                if order >= 2 {
                    ubar.d2[ui] += cc;
                }
            }
        }
        tanh_backward(&self.s, &self.u, &ubar)
    }
}

/// A network output together with its input derivatives at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    /// Present only when second derivatives were requested.
    pub d2: Option<Vec<f64>>,
}

/// An architecture paired with a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
}

impl Network {
    /// Freshly initialized network, see [`Architecture::init_parameters`].
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let params = arch.init_parameters(seed);
        Self { arch, params }
    }

    pub fn with_parameters(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn set_parameters(&mut self, params: Vec<f64>) -> Result<()> {
        self.arch.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::Domain(format!(
                "network input must be finite, got {x}"
            )));
        }
        Ok(self.arch.forward_batch(&self.params, &[x], 0)?.output.value)
    }

    /// Output at every point of `xs`, row-major `xs.len() x output_dim`.
    pub fn forward_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.arch.forward_batch(&self.params, xs, 0)?.output.value)
    }

    pub fn forward_with_input_derivatives(&self, x: f64, order: usize) -> Result<DerivativeBundle> {
        if order == 0 || order > 2 {
            return Err(Error::Domain(format!(
                "input derivative order must be 1 or 2, got {order}"
            )));
        }
        let out = self.arch.forward_batch(&self.params, &[x], order)?.output;
        Ok(DerivativeBundle {
            value: out.value,
            d1: out.d1,
            d2: (order == 2).then_some(out.d2),
        })
    }

    /// See [`Architecture::value_and_gradient`].
    pub fn parameter_gradient<F>(
        &self,
        xs: &[f64],
        order: usize,
        objective: F,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&Jets) -> (f64, Jets),
    {
        self.arch
            .value_and_gradient(&self.params, xs, order, objective)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_dense(act: Activation, w: f64, b: f64) -> Network {
        let arch = Architecture::builder([-1.0, 1.0])
            .dense(1, act)
            .build()
            .unwrap();
        Network::with_parameters(arch, vec![w, b]).unwrap()
    }

    #[test]
    fn dense_identity_forward() {
        // Domain [-1, 1] maps inputs to themselves.
        let net = single_dense(Activation::Identity, 2.0, 1.0);
        assert_eq!(net.forward(3.0).unwrap(), vec![7.0]);
    }

    #[test]
    fn dense_tanh_at_zero() {
        let net = single_dense(Activation::Tanh, 1.0, 0.0);
        assert_eq!(net.forward(0.0).unwrap(), vec![0.0]);
        let d = net.forward_with_input_derivatives(0.0, 1).unwrap();
        assert_eq!(d.d1, vec![1.0]);
        assert!(d.d2.is_none());
    }

    #[test]
    fn legendre_block_with_zero_affine() {
        let arch = Architecture::builder([-1.0, 1.0])
            .legendre(2)
            .build()
            .unwrap();
        let net = Network::with_parameters(arch, vec![0.0, 0.0]).unwrap();
        assert_eq!(net.forward(0.3).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn legendre_block_degree_two_has_flat_slope_at_origin() {
        let arch = Architecture::builder([-1.0, 1.0])
            .legendre(3)
            .build()
            .unwrap();
        let net = Network::with_parameters(arch, vec![1.0, 0.0]).unwrap();
        let d = net.forward_with_input_derivatives(0.0, 2).unwrap();
        assert_eq!(d.d1[2], 0.0);
    }

    #[test]
    fn parameter_gradient_of_identity_layer() {
        let net = single_dense(Activation::Identity, 2.0, 1.0);
        let x = 0.7;
        let (v, g) = net
            .parameter_gradient(&[x], 0, |jets| {
                let mut adj = Jets::zeros(1, 1, 0);
                adj.value[0] = 1.0;
                (jets.value[0], adj)
            })
            .unwrap();
        assert!((v - 2.4).abs() < 1e-15);
        assert_eq!(g, vec![x, 1.0]);
    }

    #[test]
    fn parameter_gradient_of_squared_error() {
        let net = single_dense(Activation::Tanh, 0.8, -0.1);
        let (x, c) = (0.4, 0.25);
        let (_, g) = net
            .parameter_gradient(&[x], 0, |jets| {
                let f = jets.value[0];
                let mut adj = Jets::zeros(1, 1, 0);
                adj.value[0] = 2.0 * (f - c);
                ((f - c).powi(2), adj)
            })
            .unwrap();
        let f = (0.8f64 * x - 0.1).tanh();
        let df = 1.0 - f * f;
        assert!((g[0] - 2.0 * (f - c) * df * x).abs() < 1e-15);
        assert!((g[1] - 2.0 * (f - c) * df).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded_and_biases_start_at_zero() {
        let arch = Architecture::builder([0.0, 1.0])
            .legendre(4)
            .dense(8, Activation::Tanh)
            .dense(1, Activation::Identity)
            .build()
            .unwrap();
        let a = arch.init_parameters(3);
        assert_eq!(a, arch.init_parameters(3));
        assert_ne!(a, arch.init_parameters(4));
        for i in arch.bias_indices() {
            assert_eq!(a[i], 0.0);
        }
        assert_eq!(arch.bias_indices().len(), 1 + 8 + 1);
    }

    #[test]
    fn rejects_inconsistent_layers() {
        let bad = vec![
            LayerSpec::Dense {
                in_width: 1,
                out_width: 3,
                activation: Activation::Tanh,
            },
            LayerSpec::Dense {
                in_width: 2,
                out_width: 1,
                activation: Activation::Identity,
            },
        ];
        assert!(Architecture::new(bad, [0.0, 1.0]).is_err());
        let arch = Architecture::builder([0.0, 1.0])
            .dense(1, Activation::Tanh)
            .build()
            .unwrap();
        assert!(Network::with_parameters(arch.clone(), vec![1.0]).is_err());
        let net = Network::new(arch, 0);
        assert!(net.forward_with_input_derivatives(0.1, 3).is_err());
        assert!(net.forward(f64::NAN).is_err());
    }

    #[test]
    fn non_finite_intermediate_names_layer() {
        let arch = Architecture::builder([-1.0, 1.0])
            .dense(1, Activation::Identity)
            .dense(1, Activation::Identity)
            .build()
            .unwrap();
        let net = Network::with_parameters(arch, vec![f64::INFINITY, 0.0, 1.0, 0.0]).unwrap();
        match net.forward(0.5) {
            Err(Error::NonFiniteLayer { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected a layer error, got {other:?}"),
        }
    }

    #[test]
    fn chunked_batches_match_single_points() {
        let arch = Architecture::builder([0.0, 2.0])
            .legendre(5)
            .dense(6, Activation::Tanh)
            .chebyshev(4)
            .dense(1, Activation::Identity)
            .build()
            .unwrap();
        let net = Network::new(arch, 9);
        let xs: Vec<f64> = (0..150).map(|i| i as f64 / 75.0).collect();
        let batch = net.forward_many(&xs).unwrap();
        for (i, &x) in xs.iter().enumerate().step_by(17) {
            assert_eq!(batch[i], net.forward(x).unwrap()[0]);
        }
    }
}
