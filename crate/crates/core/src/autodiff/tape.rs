//! Reverse-mode differentiation over an eagerly evaluated operation tape.
//!
//! A [`Tape`] records vector-valued primitive operations (affine transforms,
//! activations, normalization, softmax variants, elementwise arithmetic, and
//! reductions) as they are evaluated. Nodes are pushed in topological order,
//! so the backward pass is a single reverse sweep that visits each node once.
//!
//! A tape snapshots the parameter array it was recorded against. Parameters
//! enter the graph through `param` leaves and fused `affine` ops that
//! reference offsets into that array; the backward pass accumulates a flat
//! gradient of the same length.

use super::DiffError;

pub type NodeId = usize;

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding data that does not receive a gradient.
    Constant,
    /// Leaf view of `params[offset..offset+len]`.
    Param { offset: usize },
    /// `y = W x + b` with `W` row-major at `weights`, `b` at `bias`.
    Affine {
        weights: usize,
        bias: usize,
        input: NodeId,
    },
    /// Zero-mean, unit-variance normalization across the vector.
    Normalize { input: NodeId },
    Elu { input: NodeId },
    Tanh { input: NodeId },
    Softplus { input: NodeId },
    Exp { input: NodeId },
    Ln { input: NodeId },
    Softmax { input: NodeId },
    LogSoftmax { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    Scale { input: NodeId, c: f64 },
    Offset { input: NodeId, c: f64 },
    Slice { input: NodeId, start: usize },
    Sum { input: NodeId },
    Dot { a: NodeId, b: NodeId },
    /// Scalar combination of scalar nodes: `bias + sum_t c_t * x_t`.
    LinComb { terms: Vec<(NodeId, f64)>, bias: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Identifies the parameter array a tape was recorded against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TapeSource {
    /// Standalone parameter array (tests, toy problems).
    Raw,
    /// A [`super::Network`]: id plus the version seen at record time.
    Network { id: u64, version: u64 },
}

#[derive(Debug, Clone)]
pub struct Tape {
    params: Vec<f64>,
    source: TapeSource,
    nodes: Vec<Node>,
}

// ---- shared forward kernels (used by recording and by replay checks) ----

pub(crate) fn affine_value(params: &[f64], weights: usize, bias: usize, x: &[f64], out: &mut [f64]) {
    let fan_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = weights + o * fan_in;
        let mut acc = params[bias + o];
        for (i, &xi) in x.iter().enumerate() {
            acc += params[row + i] * xi;
        }
        *y = acc;
    }
}

pub(crate) fn normalize_value(x: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    for (y, &v) in out.iter_mut().zip(x) {
        *y = (v - mean) * inv;
    }
}

pub(crate) fn elu_value(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub(crate) fn softplus_value(x: f64) -> f64 {
    // ln(1 + e^x), stable for both tails.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax_value(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (y, &v) in out.iter_mut().zip(x) {
        *y = (v - max).exp();
        total += *y;
    }
    for y in out.iter_mut() {
        *y /= total;
    }
}

pub(crate) fn log_softmax_value(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    for (y, &v) in out.iter_mut().zip(x) {
        *y = v - lse;
    }
}

impl Tape {
    /// Tape over a standalone parameter array.
    pub fn raw(params: Vec<f64>) -> Self {
        Self {
            params,
            source: TapeSource::Raw,
            nodes: Vec::new(),
        }
    }

    pub(crate) fn with_source(params: Vec<f64>, source: TapeSource) -> Self {
        Self {
            params,
            source,
            nodes: Vec::new(),
        }
    }

    pub(crate) fn source(&self) -> TapeSource {
        self.source
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Id of the most recently recorded node.
    pub fn last_node(&self) -> NodeId {
        assert!(!self.nodes.is_empty(), "empty tape has no last node");
        self.nodes.len() - 1
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    // ---- leaves ----

    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        self.push(Op::Constant, values.to_vec())
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(Op::Constant, vec![value])
    }

    pub fn param(&mut self, offset: usize, len: usize) -> NodeId {
        assert!(offset + len <= self.params.len(), "param slice out of range");
        let value = self.params[offset..offset + len].to_vec();
        self.push(Op::Param { offset }, value)
    }

    // ---- layers ----

    pub fn affine(&mut self, weights: usize, bias: usize, fan_out: usize, input: NodeId) -> NodeId {
        let fan_in = self.nodes[input].value.len();
        assert!(
            weights + fan_in * fan_out <= self.params.len() && bias + fan_out <= self.params.len(),
            "affine parameter slice out of range"
        );
        let mut out = vec![0.0; fan_out];
        affine_value(&self.params, weights, bias, &self.nodes[input].value, &mut out);
        self.push(Op::Affine { weights, bias, input }, out)
    }

    pub fn normalize(&mut self, input: NodeId) -> NodeId {
        let mut out = vec![0.0; self.nodes[input].value.len()];
        normalize_value(&self.nodes[input].value, &mut out);
        self.push(Op::Normalize { input }, out)
    }

    pub fn elu(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|&v| elu_value(v)).collect();
        self.push(Op::Elu { input }, out)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|&v| v.tanh()).collect();
        self.push(Op::Tanh { input }, out)
    }

    pub fn softplus(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[input]
            .value
            .iter()
            .map(|&v| softplus_value(v))
            .collect();
        self.push(Op::Softplus { input }, out)
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|&v| v.exp()).collect();
        self.push(Op::Exp { input }, out)
    }

    pub fn ln(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|&v| v.ln()).collect();
        self.push(Op::Ln { input }, out)
    }

    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let mut out = vec![0.0; self.nodes[input].value.len()];
        softmax_value(&self.nodes[input].value, &mut out);
        self.push(Op::Softmax { input }, out)
    }

    pub fn log_softmax(&mut self, input: NodeId) -> NodeId {
        let mut out = vec![0.0; self.nodes[input].value.len()];
        log_softmax_value(&self.nodes[input].value, &mut out);
        self.push(Op::LogSoftmax { input }, out)
    }

    // ---- elementwise arithmetic ----

    fn binary_values(&self, a: NodeId, b: NodeId) -> (&[f64], &[f64]) {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.len(), vb.len(), "elementwise operands differ in length");
        (va, vb)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = self.binary_values(a, b);
        let out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a, b }, out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = self.binary_values(a, b);
        let out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        self.push(Op::Sub { a, b }, out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = self.binary_values(a, b);
        let out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        self.push(Op::Mul { a, b }, out)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = self.binary_values(a, b);
        let out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x / y).collect();
        self.push(Op::Div { a, b }, out)
    }

    pub fn scale(&mut self, input: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|&v| c * v).collect();
        self.push(Op::Scale { input, c }, out)
    }

    pub fn offset(&mut self, input: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|&v| v + c).collect();
        self.push(Op::Offset { input, c }, out)
    }

    // ---- shape and reductions ----

    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> NodeId {
        let parent = &self.nodes[input].value;
        assert!(start + len <= parent.len(), "slice out of range");
        let out = parent[start..start + len].to_vec();
        self.push(Op::Slice { input, start }, out)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self.nodes[input].value.iter().sum::<f64>();
        self.push(Op::Sum { input }, vec![total])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = self.binary_values(a, b);
        let total = va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>();
        self.push(Op::Dot { a, b }, vec![total])
    }

    /// `bias + sum_t coeff_t * value_t` over scalar nodes.
    pub fn lin_comb(&mut self, terms: &[(NodeId, f64)], bias: f64) -> NodeId {
        let mut total = bias;
        for &(id, c) in terms {
            let v = &self.nodes[id].value;
            assert_eq!(v.len(), 1, "lin_comb terms must be scalar nodes");
            total += c * v[0];
        }
        self.push(
            Op::LinComb {
                terms: terms.to_vec(),
                bias,
            },
            vec![total],
        )
    }

    // ---- backward ----

    /// Gradient of `output . output_gradient` with respect to the parameter
    /// array, without any staleness check. Prefer the checked entry points on
    /// [`super::Network`] when the tape was recorded against a network.
    pub fn backward_unchecked(
        &self,
        output: NodeId,
        output_gradient: &[f64],
    ) -> Result<Vec<f64>, DiffError> {
        let out_len = self.nodes[output].value.len();
        if output_gradient.len() != out_len {
            return Err(DiffError::GradientDim {
                got: output_gradient.len(),
                want: out_len,
            });
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[output] = Some(output_gradient.to_vec());
        let mut grad = vec![0.0; self.params.len()];

        for id in (0..self.nodes.len()).rev() {
            let adj = match adjoints[id].take() {
                Some(a) => a,
                None => continue,
            };
            let node = &self.nodes[id];
            match node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (g, a) in grad[offset..offset + adj.len()].iter_mut().zip(&adj) {
                        *g += a;
                    }
                }
                Op::Affine { weights, bias, input } => {
                    let x = &self.nodes[input].value;
                    let fan_in = x.len();
                    let upstream = ensure(&mut adjoints, input, fan_in);
                    for (o, &a) in adj.iter().enumerate() {
                        grad[bias + o] += a;
                        let row = weights + o * fan_in;
                        for i in 0..fan_in {
                            grad[row + i] += a * x[i];
                            upstream[i] += self.params[row + i] * a;
                        }
                    }
                }
                Op::Normalize { input } => {
                    let x = &self.nodes[input].value;
                    let y = &node.value;
                    let n = x.len() as f64;
                    let mean = x.iter().sum::<f64>() / n;
                    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + NORM_EPS).sqrt();
                    let mean_adj = adj.iter().sum::<f64>() / n;
                    let mean_adj_y = adj.iter().zip(y).map(|(a, v)| a * v).sum::<f64>() / n;
                    let upstream = ensure(&mut adjoints, input, x.len());
                    for i in 0..x.len() {
                        upstream[i] += inv * (adj[i] - mean_adj - y[i] * mean_adj_y);
                    }
                }
                Op::Elu { input } => {
                    let y = &node.value;
                    let upstream = ensure(&mut adjoints, input, y.len());
                    for i in 0..y.len() {
                        let d = if y[i] > 0.0 { 1.0 } else { y[i] + 1.0 };
                        upstream[i] += adj[i] * d;
                    }
                }
                Op::Tanh { input } => {
                    let y = &node.value;
                    let upstream = ensure(&mut adjoints, input, y.len());
                    for i in 0..y.len() {
                        upstream[i] += adj[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Softplus { input } => {
                    let y = &node.value;
                    let upstream = ensure(&mut adjoints, input, y.len());
                    for i in 0..y.len() {
                        // sigmoid(x) recovered from y = softplus(x).
                        upstream[i] += adj[i] * (1.0 - (-y[i]).exp());
                    }
                }
                Op::Exp { input } => {
                    let y = &node.value;
                    let upstream = ensure(&mut adjoints, input, y.len());
                    for i in 0..y.len() {
                        upstream[i] += adj[i] * y[i];
                    }
                }
                Op::Ln { input } => {
                    let x = &self.nodes[input].value;
                    let upstream = ensure(&mut adjoints, input, x.len());
                    for i in 0..x.len() {
                        upstream[i] += adj[i] / x[i];
                    }
                }
                Op::Softmax { input } => {
                    let y = &node.value;
                    let inner = adj.iter().zip(y).map(|(a, v)| a * v).sum::<f64>();
                    let upstream = ensure(&mut adjoints, input, y.len());
                    for i in 0..y.len() {
                        upstream[i] += y[i] * (adj[i] - inner);
                    }
                }
                Op::LogSoftmax { input } => {
                    let y = &node.value;
                    let total = adj.iter().sum::<f64>();
                    let upstream = ensure(&mut adjoints, input, y.len());
                    for i in 0..y.len() {
                        upstream[i] += adj[i] - y[i].exp() * total;
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut adjoints, a, &adj, 1.0);
                    accumulate(&mut adjoints, b, &adj, 1.0);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adjoints, a, &adj, 1.0);
                    accumulate(&mut adjoints, b, &adj, -1.0);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    let ua = ensure(&mut adjoints, a, va.len());
                    for i in 0..va.len() {
                        ua[i] += adj[i] * vb[i];
                    }
                    let ub = ensure(&mut adjoints, b, vb.len());
                    for i in 0..vb.len() {
                        ub[i] += adj[i] * va[i];
                    }
                }
                Op::Div { a, b } => {
                    let vb = self.nodes[b].value.clone();
                    let y = node.value.clone();
                    let ua = ensure(&mut adjoints, a, vb.len());
                    for i in 0..vb.len() {
                        ua[i] += adj[i] / vb[i];
                    }
                    let ub = ensure(&mut adjoints, b, vb.len());
                    for i in 0..vb.len() {
                        ub[i] -= adj[i] * y[i] / vb[i];
                    }
                }
                Op::Scale { input, c } => accumulate(&mut adjoints, input, &adj, c),
                Op::Offset { input, .. } => accumulate(&mut adjoints, input, &adj, 1.0),
                Op::Slice { input, start } => {
                    let parent_len = self.nodes[input].value.len();
                    let upstream = ensure(&mut adjoints, input, parent_len);
                    for (i, &a) in adj.iter().enumerate() {
                        upstream[start + i] += a;
                    }
                }
                Op::Sum { input } => {
                    let len = self.nodes[input].value.len();
                    let upstream = ensure(&mut adjoints, input, len);
                    for u in upstream.iter_mut() {
                        *u += adj[0];
                    }
                }
                Op::Dot { a, b } => {
                    let (va, vb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    let ua = ensure(&mut adjoints, a, va.len());
                    for i in 0..va.len() {
                        ua[i] += adj[0] * vb[i];
                    }
                    let ub = ensure(&mut adjoints, b, vb.len());
                    for i in 0..vb.len() {
                        ub[i] += adj[0] * va[i];
                    }
                }
                Op::LinComb { ref terms, .. } => {
                    for &(t, c) in terms {
                        let upstream = ensure(&mut adjoints, t, 1);
                        upstream[0] += adj[0] * c;
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Gradient of a scalar node with seed 1.0.
    pub fn backward_scalar_unchecked(&self, output: NodeId) -> Result<Vec<f64>, DiffError> {
        self.backward_unchecked(output, &[1.0])
    }

    /// Recomputes every node from the recorded leaves and parameter snapshot
    /// and checks the stored values bit for bit.
    pub fn replay_matches(&self) -> bool {
        for (id, node) in self.nodes.iter().enumerate() {
            let recomputed: Vec<f64> = match node.op {
                Op::Constant | Op::Param { .. } => continue,
                Op::Affine { weights, bias, input } => {
                    let mut out = vec![0.0; node.value.len()];
                    affine_value(&self.params, weights, bias, &self.nodes[input].value, &mut out);
                    out
                }
                Op::Normalize { input } => {
                    let mut out = vec![0.0; node.value.len()];
                    normalize_value(&self.nodes[input].value, &mut out);
                    out
                }
                Op::Elu { input } => self.nodes[input].value.iter().map(|&v| elu_value(v)).collect(),
                Op::Tanh { input } => self.nodes[input].value.iter().map(|&v| v.tanh()).collect(),
                Op::Softplus { input } => self.nodes[input]
                    .value
                    .iter()
                    .map(|&v| softplus_value(v))
                    .collect(),
                Op::Exp { input } => self.nodes[input].value.iter().map(|&v| v.exp()).collect(),
                Op::Ln { input } => self.nodes[input].value.iter().map(|&v| v.ln()).collect(),
                Op::Softmax { input } => {
                    let mut out = vec![0.0; node.value.len()];
                    softmax_value(&self.nodes[input].value, &mut out);
                    out
                }
                Op::LogSoftmax { input } => {
                    let mut out = vec![0.0; node.value.len()];
                    log_softmax_value(&self.nodes[input].value, &mut out);
                    out
                }
                Op::Add { a, b } => zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y),
                Op::Sub { a, b } => zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y),
                Op::Mul { a, b } => zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y),
                Op::Div { a, b } => zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x / y),
                Op::Scale { input, c } => self.nodes[input].value.iter().map(|&v| c * v).collect(),
                Op::Offset { input, c } => self.nodes[input].value.iter().map(|&v| v + c).collect(),
                Op::Slice { input, start } => {
                    self.nodes[input].value[start..start + node.value.len()].to_vec()
                }
                Op::Sum { input } => vec![self.nodes[input].value.iter().sum::<f64>()],
                Op::Dot { a, b } => vec![self.nodes[a]
                    .value
                    .iter()
                    .zip(&self.nodes[b].value)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()],
                Op::LinComb { ref terms, bias } => {
                    let mut total = bias;
                    for &(t, c) in terms {
                        total += c * self.nodes[t].value[0];
                    }
                    vec![total]
                }
            };
            if recomputed
                .iter()
                .zip(&self.nodes[id].value)
                .any(|(r, v)| r.to_bits() != v.to_bits())
            {
                return false;
            }
        }
        true
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn ensure<'a>(adjoints: &'a mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'a mut Vec<f64> {
    let slot = &mut adjoints[id];
    if slot.is_none() {
        *slot = Some(vec![0.0; len]);
    }
    slot.as_mut().unwrap()
}

fn accumulate(adjoints: &mut [Option<Vec<f64>>], id: NodeId, adj: &[f64], coeff: f64) {
    let upstream = ensure(adjoints, id, adj.len());
    for (u, &a) in upstream.iter_mut().zip(adj) {
        *u += coeff * a;
    }
}
