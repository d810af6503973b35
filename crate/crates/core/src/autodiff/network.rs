//! Multilayer perceptrons over a flat parameter array.
//!
//! Layer stack: affine layers with elu on hidden layers and a linear output.
//! When `first_layer_norm` is on, the first hidden layer is normalized
//! (learnable gain and bias) and squashed with tanh instead of elu, so every
//! first-layer post-activation lies in (-1, 1).
//!
//! Parameter layout, in order: per layer row-major weights then biases, with
//! the normalization gain and bias appended directly after the first layer's
//! affine block when enabled.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::tape::{affine_value, elu_value, normalize_value, TapeSource};
use super::{DiffError, NodeId, Tape};

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

const CHECKPOINT_MAGIC: &[u8; 8] = b"DIFFNET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    weights: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Offsets of the first-layer normalization gain/bias, when enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
struct NormLayout {
    gain: usize,
    bias: usize,
    len: usize,
}

/// A named slice of the trailing network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug)]
pub struct Network {
    id: u64,
    version: u64,
    layer_sizes: Vec<usize>,
    activation: Activation,
    first_layer_norm: bool,
    layers: Vec<LayerLayout>,
    norm: Option<NormLayout>,
    params: Vec<f64>,
    heads: Vec<Head>,
}

/// Builds a deterministic, seeded MLP. Weights are fan-in-scaled uniform,
/// biases zero, normalization gain one and bias zero.
pub fn build_network(
    layer_sizes: &[usize],
    activation: Activation,
    first_layer_norm: bool,
    seed: u64,
) -> Result<Network, DiffError> {
    if layer_sizes.len() < 2 {
        return Err(DiffError::TooFewLayers(layer_sizes.len()));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(DiffError::ZeroWidthLayer(pos));
    }
    if first_layer_norm && layer_sizes.len() == 2 {
        // Normalization squashes with tanh; the output layer must stay linear.
        return Err(DiffError::NormNeedsHiddenLayer);
    }

    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    let mut norm = None;
    let mut offset = 0usize;
    for l in 0..layer_sizes.len() - 1 {
        let fan_in = layer_sizes[l];
        let fan_out = layer_sizes[l + 1];
        layers.push(LayerLayout {
            weights: offset,
            bias: offset + fan_in * fan_out,
            fan_in,
            fan_out,
        });
        offset += (fan_in + 1) * fan_out;
        if l == 0 && first_layer_norm {
            norm = Some(NormLayout {
                gain: offset,
                bias: offset + fan_out,
                len: fan_out,
            });
            offset += 2 * fan_out;
        }
    }

    let mut params = vec![0.0; offset];
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for layer in &layers {
        let limit = 1.0 / (layer.fan_in as f64).sqrt();
        for w in &mut params[layer.weights..layer.weights + layer.fan_in * layer.fan_out] {
            *w = rng.random_range(-limit..limit);
        }
    }
    if let Some(n) = norm {
        for g in &mut params[n.gain..n.gain + n.len] {
            *g = 1.0;
        }
    }

    Ok(Network {
        id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
        version: 0,
        layer_sizes: layer_sizes.to_vec(),
        activation,
        first_layer_norm,
        layers,
        norm,
        params,
        heads: Vec::new(),
    })
}

/// Closed-form parameter count for the given construction arguments.
pub fn parameter_count(layer_sizes: &[usize], first_layer_norm: bool) -> usize {
    let affine: usize = layer_sizes
        .windows(2)
        .map(|w| (w[0] + 1) * w[1])
        .sum();
    let norm = if first_layer_norm && layer_sizes.len() > 2 {
        2 * layer_sizes[1]
    } else {
        0
    };
    affine + norm
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn first_layer_norm(&self) -> bool {
        self.first_layer_norm
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to parameters. Bumps the version so tapes recorded
    /// before the mutation refuse to run backward.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Declares named head slices over the trailing outputs, in order.
    pub fn set_heads(&mut self, heads: &[(&str, usize)]) {
        let total: usize = heads.iter().map(|(_, len)| len).sum();
        assert!(
            total <= self.output_dim(),
            "head lengths exceed network output"
        );
        let mut offset = self.output_dim() - total;
        self.heads.clear();
        for (name, len) in heads {
            self.heads.push(Head {
                name: (*name).to_string(),
                offset,
                len: *len,
            });
            offset += len;
        }
    }

    pub fn head(&self, name: &str) -> Option<&Head> {
        self.heads.iter().find(|h| h.name == name)
    }

    /// Parameter range of the output layer's bias vector. Head biasing
    /// adjusts entries in this range.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let last = self.layers.last().unwrap();
        last.bias..last.bias + last.fan_out
    }

    fn check_input(&self, input: &[f64]) -> Result<(), DiffError> {
        if input.len() != self.input_dim() {
            return Err(DiffError::InputDim {
                got: input.len(),
                want: self.input_dim(),
            });
        }
        Ok(())
    }

    /// Pure evaluation without recording. Bit-identical to [`Self::forward`].
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>, DiffError> {
        self.check_input(input)?;
        let mut h = input.to_vec();
        let mut scratch = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            scratch.clear();
            scratch.resize(layer.fan_out, 0.0);
            affine_value(&self.params, layer.weights, layer.bias, &h, &mut scratch);
            let is_output = l == self.layers.len() - 1;
            if is_output {
                return Ok(scratch);
            }
            if l == 0 {
                if let Some(n) = self.norm {
                    let mut normed = vec![0.0; n.len];
                    normalize_value(&scratch, &mut normed);
                    for (i, v) in normed.iter_mut().enumerate() {
                        *v = (*v * self.params[n.gain + i] + self.params[n.bias + i]).tanh();
                    }
                    h = normed;
                    continue;
                }
            }
            h = scratch.iter().map(|&v| elu_value(v)).collect();
        }
        unreachable!("networks have at least one layer");
    }

    /// Records the layer stack on `tape` starting from an existing node.
    /// The tape must have been created with [`Self::tape`].
    pub fn apply_on_tape(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId, DiffError> {
        match tape.source() {
            TapeSource::Network { id, version } if id == self.id => {
                if version != self.version {
                    return Err(DiffError::StaleTape);
                }
            }
            _ => return Err(DiffError::WrongNetwork),
        }
        if tape.value(input).len() != self.input_dim() {
            return Err(DiffError::InputDim {
                got: tape.value(input).len(),
                want: self.input_dim(),
            });
        }
        let mut h = input;
        for (l, layer) in self.layers.iter().enumerate() {
            h = tape.affine(layer.weights, layer.bias, layer.fan_out, h);
            let is_output = l == self.layers.len() - 1;
            if is_output {
                break;
            }
            if l == 0 {
                if let Some(n) = self.norm {
                    let normed = tape.normalize(h);
                    let gain = tape.param(n.gain, n.len);
                    let bias = tape.param(n.bias, n.len);
                    let scaled = tape.mul(normed, gain);
                    let shifted = tape.add(scaled, bias);
                    h = tape.tanh(shifted);
                    continue;
                }
            }
            h = tape.elu(h);
        }
        Ok(h)
    }

    /// Fresh tape bound to this network's current parameters.
    pub fn tape(&self) -> Tape {
        Tape::with_source(
            self.params.clone(),
            TapeSource::Network {
                id: self.id,
                version: self.version,
            },
        )
    }

    /// Evaluates the network and returns the output together with the tape
    /// that captured all intermediates. The output is the tape's last node.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape), DiffError> {
        self.check_input(input)?;
        let mut tape = self.tape();
        let x = tape.constant(input);
        let out = self.apply_on_tape(&mut tape, x)?;
        Ok((tape.value(out).to_vec(), tape))
    }

    /// Gradient of `output . output_gradient` with respect to the parameters,
    /// for a tape produced by [`Self::forward`]. Errors if the parameters
    /// changed since the tape was recorded.
    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<Vec<f64>, DiffError> {
        self.backward_from(tape, tape.last_node(), output_gradient)
    }

    /// Gradient seeded at an arbitrary node of a tape recorded against this
    /// network, with staleness checking.
    pub fn backward_from(
        &self,
        tape: &Tape,
        node: NodeId,
        output_gradient: &[f64],
    ) -> Result<Vec<f64>, DiffError> {
        match tape.source() {
            TapeSource::Network { id, version } if id == self.id => {
                if version != self.version {
                    return Err(DiffError::StaleTape);
                }
            }
            _ => return Err(DiffError::WrongNetwork),
        }
        tape.backward_unchecked(node, output_gradient)
    }

    /// Gradient of a scalar node with seed 1.0, with staleness checking.
    pub fn backward_scalar(&self, tape: &Tape, node: NodeId) -> Result<Vec<f64>, DiffError> {
        self.backward_from(tape, node, &[1.0])
    }

    fn same_layout(&self, other: &Network) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.first_layer_norm == other.first_layer_norm
            && self.activation == other.activation
    }

    /// Serializes layout and parameters: magic, layer sizes, flags, then
    /// parameters as little-endian 64-bit floats.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), DiffError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        w.write_all(&[0u8])?; // activation id: elu
        w.write_all(&[self.first_layer_norm as u8])?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for &p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Network, DiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(DiffError::BadCheckpoint("bad magic".into()));
        }
        let n_sizes = read_u32(r)? as usize;
        if n_sizes < 2 || n_sizes > 64 {
            return Err(DiffError::BadCheckpoint(format!(
                "implausible layer count {n_sizes}"
            )));
        }
        let mut layer_sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            layer_sizes.push(read_u64(r)? as usize);
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        if flags[0] != 0 {
            return Err(DiffError::BadCheckpoint(format!(
                "unknown activation id {}",
                flags[0]
            )));
        }
        let first_layer_norm = flags[1] != 0;
        let count = read_u64(r)? as usize;
        let mut net = build_network(&layer_sizes, Activation::Elu, first_layer_norm, 0)?;
        if count != net.param_count() {
            return Err(DiffError::BadCheckpoint(format!(
                "parameter count {count} does not match layout {}",
                net.param_count()
            )));
        }
        let mut buf = [0u8; 8];
        for p in net.params_mut() {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        Ok(net)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, DiffError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Copies source parameters into a target with an identical layout.
pub fn copy_into_target(net: &Network, target: &mut Network) -> Result<(), DiffError> {
    if !net.same_layout(target) {
        return Err(DiffError::LayoutMismatch);
    }
    let src = net.params.clone();
    target.params_mut().copy_from_slice(&src);
    Ok(())
}
