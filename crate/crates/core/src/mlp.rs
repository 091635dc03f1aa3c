//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Both the imitation environment network and the actor/critic pairs are
//! plain stacks of [`DenseLayer`]s, each `y = act(W x + b)` with `W` stored
//! as `out_dim × in_dim`. Batches are rows of an `Array2`.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{len_mismatch, shape_mismatch, Error, Result};
use crate::linalg::RealVector;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Linear,
}

impl ActivationKind {
    fn tag(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Linear => "linear",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(ActivationKind::Tanh),
            "linear" => Some(ActivationKind::Linear),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: ActivationKind,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Per-layer activations cached by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Network input (`batch × in_dim`).
    input: Array2<f64>,
    /// Post-activation output of each layer (`batch × out_dim`).
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("tape of an empty network")
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Input to layer `idx`.
    fn layer_input(&self, idx: usize) -> &Array2<f64> {
        if idx == 0 {
            &self.input
        } else {
            &self.outputs[idx - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Gradients with the same shape as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights *= s;
            l.biases *= s;
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }

    /// Flattened in the same order as [`Mlp::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|&x| x == 0.0) && l.biases.iter().all(|&x| x == 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(SgdConfig { learning_rate })
    }
}

fn activate(kind: ActivationKind, z: &mut Array2<f64>) {
    if kind == ActivationKind::Tanh {
        z.mapv_inplace(f64::tanh);
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(
        dims: &[usize],
        activations: &[ActivationKind],
        rng: &mut RngStream,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output size".into(),
            ));
        }
        if activations.len() + 1 != dims.len() {
            return Err(len_mismatch(
                "Mlp::init activations",
                dims.len() - 1,
                activations.len(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer sizes must be positive".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.uniform_range(-limit, limit)
                });
                DenseLayer {
                    weights,
                    biases: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "an MLP needs at least one layer".into(),
            ));
        }
        for l in &layers {
            if l.biases.len() != l.out_dim() {
                return Err(len_mismatch(
                    "DenseLayer biases",
                    l.out_dim(),
                    l.biases.len(),
                ));
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(len_mismatch(
                    "Mlp layer chain",
                    w[0].out_dim(),
                    w[1].in_dim(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Layer sizes including the input size.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    pub fn activations(&self) -> Vec<ActivationKind> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(RealVector, Tape)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (out, tape) = self.forward_batch(x)?;
        Ok((RealVector(out.into_raw_vec_and_offset().0), tape))
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.in_dim() {
            return Err(len_mismatch(
                "Mlp::forward input",
                self.in_dim(),
                input.ncols(),
            ));
        }
        let input = input.to_owned();
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().unwrap_or(&input);
            let mut z = x.dot(&layer.weights.t());
            z += &layer.biases;
            activate(layer.activation, &mut z);
            outputs.push(z);
        }
        let out = outputs.last().expect("non-empty network").clone();
        Ok((out, Tape { input, outputs }))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<RealVector> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(RealVector(
            self.predict_batch(x)?.into_raw_vec_and_offset().0,
        ))
    }

    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.in_dim() {
            return Err(len_mismatch(
                "Mlp::predict input",
                self.in_dim(),
                input.ncols(),
            ));
        }
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.biases;
            activate(layer.activation, &mut z);
            x = z;
        }
        Ok(x)
    }

    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(MlpGrads, RealVector)> {
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let (grads, dx) = self.backward_batch(tape, g)?;
        Ok((grads, RealVector(dx.into_raw_vec_and_offset().0)))
    }

    /// Reverse pass. Parameter gradients are summed over the batch rows; a
    /// caller minimizing a batch mean folds the `1/V` into `output_grad`.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let (grads, dx) = self.reverse(tape, output_grad, true, true)?;
        Ok((grads.expect("requested"), dx.expect("requested")))
    }

    /// Parameter gradients only; skips the input gradient of the first layer.
    pub fn param_grads_batch(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<MlpGrads> {
        Ok(self
            .reverse(tape, output_grad, true, false)?
            .0
            .expect("requested"))
    }

    /// Input gradient only; skips every parameter gradient.
    pub fn input_grad_batch(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        Ok(self
            .reverse(tape, output_grad, false, true)?
            .1
            .expect("requested"))
    }

    fn reverse(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<MlpGrads>, Option<Array2<f64>>)> {
        if tape.outputs.len() != self.layers.len() {
            return Err(len_mismatch(
                "Mlp::backward tape layers",
                self.layers.len(),
                tape.outputs.len(),
            ));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            let x = tape.layer_input(idx);
            if x.ncols() != layer.in_dim() {
                return Err(shape_mismatch(
                    "Mlp::backward tape",
                    x.dim(),
                    layer.weights.dim(),
                ));
            }
        }
        let out = tape.output();
        if output_grad.dim() != out.dim() {
            return Err(shape_mismatch(
                "Mlp::backward output grad",
                out.dim(),
                output_grad.dim(),
            ));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == ActivationKind::Tanh {
                delta.zip_mut_with(&tape.outputs[idx], |d, &y| *d *= 1.0 - y * y);
            }
            if want_params {
                let weights = delta.t().dot(tape.layer_input(idx));
                let biases = delta.sum_axis(Axis(0));
                layers.push(LayerGrads { weights, biases });
            }
            if idx > 0 || want_input {
                delta = delta.dot(&layer.weights);
            }
        }
        layers.reverse();
        Ok((
            want_params.then_some(MlpGrads { layers }),
            want_input.then_some(delta),
        ))
    }

    /// `p ← p − lr · ∂p` for every parameter.
    pub fn sgd_step(&mut self, grads: &MlpGrads, cfg: &SgdConfig) {
        let lr = cfg.learning_rate;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.biases.scaled_add(-lr, &g.biases);
        }
    }

    /// `self ← rho · source + (1 − rho) · self`.
    pub fn soft_update_from(&mut self, source: &Mlp, rho: f64) -> Result<()> {
        if self.dims() != source.dims() {
            return Err(Error::DimensionMismatch {
                op: "soft_update",
                left: format!("{:?}", source.dims()),
                right: format!("{:?}", self.dims()),
            });
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weights
                .zip_mut_with(&s.weights, |t, &s| *t = rho * s + (1.0 - rho) * *t);
            t.biases
                .zip_mut_with(&s.biases, |t, &s| *t = rho * s + (1.0 - rho) * *t);
        }
        Ok(())
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(len_mismatch(
                "Mlp::set_params_flat",
                self.num_params(),
                params.len(),
            ));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.biases.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }

    /// Copy of the network with every parameter set to zero.
    pub fn zeroed(&self) -> Mlp {
        let mut z = self.clone();
        for l in &mut z.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
        z
    }

    /// Text checkpoint.
    ///
    /// ```text
    /// mlp <num_layers>
    /// layer <in_dim> <out_dim> <tanh|linear>
    /// w <out_dim*in_dim hex words, row-major>
    /// b <out_dim hex words>
    /// ```
    /// Each value is the 16-digit hex of its IEEE-754 bit pattern, so a load
    /// reproduces the network bit for bit.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "mlp {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(
                s,
                "layer {} {} {}",
                l.in_dim(),
                l.out_dim(),
                l.activation.tag()
            )
            .unwrap();
            s.push('w');
            for w in l.weights.iter() {
                write!(s, " {:016x}", w.to_bits()).unwrap();
            }
            s.push_str("\nb");
            for b in l.biases.iter() {
                write!(s, " {:016x}", b.to_bits()).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Mlp> {
        let mut lines = CheckpointLines::new(text);
        Self::read_checkpoint(&mut lines)
    }

    pub(crate) fn read_checkpoint(lines: &mut CheckpointLines<'_>) -> Result<Mlp> {
        let (ln, head) = lines.next_line()?;
        let n: usize = parse_tagged(ln, head, "mlp")?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = lines.next_line()?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some("layer") {
                return Err(lines.error(ln, "expected `layer`"));
            }
            let in_dim: usize = parse_field(ln, parts.next())?;
            let out_dim: usize = parse_field(ln, parts.next())?;
            let activation = parts
                .next()
                .and_then(ActivationKind::from_tag)
                .ok_or_else(|| lines.error(ln, "bad activation tag"))?;
            let weights = read_hex_row(lines, "w", out_dim * in_dim)?;
            let biases = read_hex_row(lines, "b", out_dim)?;
            layers.push(DenseLayer {
                weights: Array2::from_shape_vec((out_dim, in_dim), weights)
                    .expect("checked length"),
                biases: Array1::from_vec(biases),
                activation,
            });
        }
        Mlp::from_layers(layers)
    }
}

/// Line cursor shared by the composite checkpoint readers.
pub(crate) struct CheckpointLines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> CheckpointLines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        CheckpointLines {
            inner: text.lines().enumerate(),
        }
    }

    pub(crate) fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return Ok((i + 1, l));
            }
        }
        Err(Error::Checkpoint {
            line: 0,
            msg: "unexpected end of checkpoint".into(),
        })
    }

    pub(crate) fn error(&self, line: usize, msg: &str) -> Error {
        Error::Checkpoint {
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(line: usize, tok: Option<&str>) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Checkpoint {
            line,
            msg: format!("bad field {tok:?}"),
        })
}

pub(crate) fn parse_tagged<T: std::str::FromStr>(line: usize, text: &str, tag: &str) -> Result<T> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Checkpoint {
            line,
            msg: format!("expected `{tag}`"),
        });
    }
    parse_field(line, parts.next())
}

pub(crate) fn hex_f64(tok: &str) -> Option<f64> {
    u64::from_str_radix(tok, 16).ok().map(f64::from_bits)
}

pub(crate) fn read_hex_row(
    lines: &mut CheckpointLines<'_>,
    tag: &str,
    expected: usize,
) -> Result<Vec<f64>> {
    let (ln, line) = lines.next_line()?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(lines.error(ln, &format!("expected `{tag}` row")));
    }
    let vals = parts
        .map(hex_f64)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| lines.error(ln, "bad hex value"))?;
    if vals.len() != expected {
        return Err(lines.error(
            ln,
            &format!("expected {expected} values, got {}", vals.len()),
        ));
    }
    Ok(vals)
}
