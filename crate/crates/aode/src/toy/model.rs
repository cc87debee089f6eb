//! Small dense network with hand-written forward/backward passes, checkpoint
//! conversion, and a finite-difference gradient check.
//!
//! The network keeps the encoder / non-encoder split that layer-wise decay
//! needs: `L` tanh "encoder" layers named `enc.<i>.*` followed by one linear
//! output layer named `out.*`. Parameters are f64 throughout.

use rand_distr::{Distribution, StandardNormal};

use super::{domain::Sample, stream_rng, ToyError};
use crate::checkpoint::{Checkpoint, TensorData, TensorRecord};
use crate::schedules::LayerRule;

/// One dense layer: row-major `weight[out][in]` plus `bias[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    fn init(in_dim: usize, out_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        Self {
            weight,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// `y = W x + b` for a batch laid out row-major as `[batch, in_dim]`.
    fn affine_batch(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * self.out_dim];
        for b in 0..batch {
            let x = &input[b * self.in_dim..(b + 1) * self.in_dim];
            let y = &mut out[b * self.out_dim..(b + 1) * self.out_dim];
            for (o, y_o) in y.iter_mut().enumerate() {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.bias[o];
                for (w, xv) in row.iter().zip(x) {
                    acc += w * xv;
                }
                *y_o = acc;
            }
        }
        out
    }
}

/// Gradient of one layer, same layout as the layer itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for the whole model: encoder layers bottom-up, then output.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

/// Training objective for the lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy on class labels (the training loss).
    CrossEntropy,
    /// Mean squared error against one-hot targets; used by closed-form
    /// gradient oracles in tests.
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub encoder: Vec<DenseLayer>,
    pub output: DenseLayer,
}

impl ToyModel {
    /// Random initialization: weights ~ N(0, 1/fan_in), zero biases.
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        num_classes: usize,
        seed: u64,
    ) -> Result<Self, ToyError> {
        if input_dim == 0 || num_classes == 0 || hidden_dims.is_empty() {
            return Err(ToyError::InvalidConfig {
                field: "model".to_string(),
                reason: "input_dim, num_classes and hidden_dims must be non-empty/positive"
                    .to_string(),
            });
        }
        if hidden_dims.contains(&0) {
            return Err(ToyError::InvalidConfig {
                field: "model.hidden_dims".to_string(),
                reason: "dimensions must be positive".to_string(),
            });
        }
        let mut rng = stream_rng(seed, "model-init");
        let mut encoder = Vec::with_capacity(hidden_dims.len());
        let mut prev = input_dim;
        for &dim in hidden_dims {
            encoder.push(DenseLayer::init(prev, dim, &mut rng));
            prev = dim;
        }
        // Zero output head: untrained logits are identically zero, so the
        // fresh model predicts a constant class and sits exactly at chance
        // regardless of how the domains are laid out.
        let output = DenseLayer {
            weight: vec![0.0; prev * num_classes],
            bias: vec![0.0; num_classes],
            in_dim: prev,
            out_dim: num_classes,
        };
        Ok(Self { encoder, output })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.output.out_dim
    }

    pub fn num_encoder_layers(&self) -> usize {
        self.encoder.len()
    }

    pub fn num_params(&self) -> usize {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.output))
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Deterministic tensor naming: `enc.<i>.weight`, `enc.<i>.bias`,
    /// `out.weight`, `out.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * (self.encoder.len() + 1));
        for i in 0..self.encoder.len() {
            names.push(format!("enc.{i}.weight"));
            names.push(format!("enc.{i}.bias"));
        }
        names.push("out.weight".to_string());
        names.push("out.bias".to_string());
        names
    }

    /// Layer classification rules matching the naming scheme.
    pub fn layer_rule(&self) -> LayerRule {
        LayerRule::indexed_prefix("enc.", self.encoder.len())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        let push = |tensors: &mut Vec<TensorRecord>, name: String, layer: &DenseLayer| {
            tensors.push(
                TensorRecord::new(
                    name.clone() + ".weight",
                    vec![layer.out_dim as u64, layer.in_dim as u64],
                    TensorData::F64(layer.weight.clone()),
                )
                .expect("layer shapes are consistent"),
            );
            tensors.push(
                TensorRecord::new(
                    name + ".bias",
                    vec![layer.out_dim as u64],
                    TensorData::F64(layer.bias.clone()),
                )
                .expect("layer shapes are consistent"),
            );
        };
        for (i, layer) in self.encoder.iter().enumerate() {
            push(&mut tensors, format!("enc.{i}"), layer);
        }
        push(&mut tensors, "out".to_string(), &self.output);
        Checkpoint::new(tensors).expect("names are unique by construction")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ToyError> {
        let malformed = |reason: String| ToyError::MalformedCheckpoint { reason };
        let take_layer = |prefix: &str| -> Result<DenseLayer, ToyError> {
            let weight = ckpt
                .get(&format!("{prefix}.weight"))
                .ok_or_else(|| malformed(format!("missing tensor {prefix}.weight")))?;
            let bias = ckpt
                .get(&format!("{prefix}.bias"))
                .ok_or_else(|| malformed(format!("missing tensor {prefix}.bias")))?;
            let [out_dim, in_dim] = weight.shape() else {
                return Err(malformed(format!(
                    "{prefix}.weight must be rank 2, got shape {:?}",
                    weight.shape()
                )));
            };
            if bias.shape() != [*out_dim] {
                return Err(malformed(format!(
                    "{prefix}.bias shape {:?} does not match weight rows {out_dim}",
                    bias.shape()
                )));
            }
            let (TensorData::F64(w), TensorData::F64(b)) = (weight.data(), bias.data()) else {
                return Err(malformed(format!("{prefix} tensors must be f64")));
            };
            Ok(DenseLayer {
                weight: w.clone(),
                bias: b.clone(),
                in_dim: *in_dim as usize,
                out_dim: *out_dim as usize,
            })
        };

        let mut encoder = Vec::new();
        loop {
            let prefix = format!("enc.{}", encoder.len());
            if ckpt.get(&format!("{prefix}.weight")).is_none() {
                break;
            }
            encoder.push(take_layer(&prefix)?);
        }
        if encoder.is_empty() {
            return Err(malformed("no encoder layers found".to_string()));
        }
        let output = take_layer("out")?;
        let model = Self { encoder, output };
        model.check_chain()?;
        Ok(model)
    }

    fn check_chain(&self) -> Result<(), ToyError> {
        let mut prev = self.encoder[0].in_dim;
        for (i, layer) in self.encoder.iter().enumerate() {
            if layer.in_dim != prev {
                return Err(ToyError::DimensionMismatch {
                    context: format!(
                        "enc.{i} expects input {}, previous layer produces {prev}",
                        layer.in_dim
                    ),
                });
            }
            prev = layer.out_dim;
        }
        if self.output.in_dim != prev {
            return Err(ToyError::DimensionMismatch {
                context: format!(
                    "out expects input {}, encoder produces {prev}",
                    self.output.in_dim
                ),
            });
        }
        Ok(())
    }

    /// Forward pass for a batch flattened row-major; returns per-layer
    /// activations (`acts[0]` is the input, `acts[l+1]` the output of encoder
    /// layer `l`) and the final logits.
    fn forward_batch(&self, input: &[f64], batch: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = Vec::with_capacity(self.encoder.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.encoder {
            let mut z = layer.affine_batch(acts.last().expect("non-empty"), batch);
            for v in &mut z {
                *v = v.tanh();
            }
            acts.push(z);
        }
        let logits = self
            .output
            .affine_batch(acts.last().expect("non-empty"), batch);
        (acts, logits)
    }

    /// Logits for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (_, logits) = self.forward_batch(x, 1);
        logits
    }

    /// Predicted class: argmax over logits, first index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.forward(x);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    fn batch_input(&self, batch: &[&Sample]) -> Result<Vec<f64>, ToyError> {
        let dim = self.input_dim();
        let mut input = Vec::with_capacity(batch.len() * dim);
        for s in batch {
            if s.x.len() != dim {
                return Err(ToyError::DimensionMismatch {
                    context: format!("sample has {} features, model expects {dim}", s.x.len()),
                });
            }
            if s.label >= self.num_classes() {
                return Err(ToyError::DimensionMismatch {
                    context: format!(
                        "label {} out of range for {} classes",
                        s.label,
                        self.num_classes()
                    ),
                });
            }
            input.extend_from_slice(&s.x);
        }
        Ok(input)
    }

    /// Batch loss under `loss`, plus an optional distillation term
    /// `lwf_weight * KL(reference || model)` over output distributions.
    pub fn loss(
        &self,
        batch: &[&Sample],
        loss: LossKind,
        reference: Option<&ToyModel>,
        lwf_weight: f64,
    ) -> Result<f64, ToyError> {
        self.loss_and_grads_impl(batch, loss, reference, lwf_weight, false)
            .map(|(l, _)| l)
    }

    /// Batch loss and gradients via manual backpropagation.
    pub fn loss_and_grads(
        &self,
        batch: &[&Sample],
        loss: LossKind,
        reference: Option<&ToyModel>,
        lwf_weight: f64,
    ) -> Result<(f64, Gradients), ToyError> {
        self.loss_and_grads_impl(batch, loss, reference, lwf_weight, true)
            .map(|(l, g)| (l, g.expect("gradients requested")))
    }

    fn loss_and_grads_impl(
        &self,
        batch: &[&Sample],
        loss: LossKind,
        reference: Option<&ToyModel>,
        lwf_weight: f64,
        want_grads: bool,
    ) -> Result<(f64, Option<Gradients>), ToyError> {
        if batch.is_empty() {
            return Err(ToyError::DimensionMismatch {
                context: "empty batch".to_string(),
            });
        }
        let b = batch.len();
        let c = self.num_classes();
        let input = self.batch_input(batch)?;
        let (acts, logits) = self.forward_batch(&input, b);
        let inv_b = 1.0 / b as f64;

        let mut total_loss = 0.0;
        // d(loss)/d(logits), scaled by 1/B.
        let mut delta = vec![0.0; b * c];
        match loss {
            LossKind::CrossEntropy => {
                for (row, sample) in batch.iter().enumerate() {
                    let z = &logits[row * c..(row + 1) * c];
                    let (log_probs, _) = log_softmax(z);
                    total_loss -= log_probs[sample.label] * inv_b;
                    for k in 0..c {
                        delta[row * c + k] =
                            (log_probs[k].exp() - f64::from(u8::from(k == sample.label))) * inv_b;
                    }
                }
            }
            LossKind::Squared => {
                for (row, sample) in batch.iter().enumerate() {
                    let z = &logits[row * c..(row + 1) * c];
                    for k in 0..c {
                        let target = f64::from(u8::from(k == sample.label));
                        let r = z[k] - target;
                        total_loss += 0.5 * r * r * inv_b;
                        delta[row * c + k] = r * inv_b;
                    }
                }
            }
        }

        if lwf_weight > 0.0 {
            let reference = reference.ok_or_else(|| ToyError::InvalidConfig {
                field: "lwf_weight".to_string(),
                reason: "distillation needs a reference model".to_string(),
            })?;
            let (_, ref_logits) = reference.forward_batch(&input, b);
            for row in 0..b {
                let z = &logits[row * c..(row + 1) * c];
                let zr = &ref_logits[row * c..(row + 1) * c];
                let (log_p, _) = log_softmax(z);
                let (log_pr, _) = log_softmax(zr);
                let mut kl = 0.0;
                for k in 0..c {
                    let pr = log_pr[k].exp();
                    kl += pr * (log_pr[k] - log_p[k]);
                    delta[row * c + k] += lwf_weight * (log_p[k].exp() - pr) * inv_b;
                }
                total_loss += lwf_weight * kl * inv_b;
            }
        }

        if !want_grads {
            return Ok((total_loss, None));
        }

        // Backward: output layer first, then encoder layers top-down.
        let mut layers = vec![
            LayerGrads {
                weight: Vec::new(),
                bias: Vec::new()
            };
            self.encoder.len() + 1
        ];
        let top_act = acts.last().expect("non-empty");
        let (dw, db, mut dh) = backward_affine(&self.output, &delta, top_act, b);
        layers[self.encoder.len()] = LayerGrads {
            weight: dw,
            bias: db,
        };
        for l in (0..self.encoder.len()).rev() {
            let out_act = &acts[l + 1];
            // tanh'(z) = 1 - tanh(z)^2, and out_act already holds tanh(z).
            let mut dz = dh;
            for (g, &a) in dz.iter_mut().zip(out_act.iter()) {
                *g *= 1.0 - a * a;
            }
            let (dw, db, dh_prev) = backward_affine(&self.encoder[l], &dz, &acts[l], b);
            layers[l] = LayerGrads {
                weight: dw,
                bias: db,
            };
            dh = dh_prev;
        }
        Ok((total_loss, Some(Gradients { layers })))
    }
}

/// Numerically stable log-softmax; also returns the log-partition value.
fn log_softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    (z.iter().map(|&v| v - log_z).collect(), log_z)
}

/// Given d(loss)/d(output) for an affine layer, returns (dW, db, d(input)).
fn backward_affine(
    layer: &DenseLayer,
    dout: &[f64],
    input: &[f64],
    batch: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (id, od) = (layer.in_dim, layer.out_dim);
    let mut dw = vec![0.0; od * id];
    let mut db = vec![0.0; od];
    let mut din = vec![0.0; batch * id];
    for b in 0..batch {
        let d = &dout[b * od..(b + 1) * od];
        let x = &input[b * id..(b + 1) * id];
        let dx = &mut din[b * id..(b + 1) * id];
        for (o, &d_o) in d.iter().enumerate() {
            db[o] += d_o;
            let w_row = &layer.weight[o * id..(o + 1) * id];
            let dw_row = &mut dw[o * id..(o + 1) * id];
            for i in 0..id {
                dw_row[i] += d_o * x[i];
                dx[i] += d_o * w_row[i];
            }
        }
    }
    (dw, db, din)
}

const GRAD_CHECK_STEP: f64 = 1e-6;
const GRAD_CHECK_COORDS: usize = 100;

/// Compares analytic gradients of the cross-entropy training loss against
/// central finite differences on at least 100 randomly selected coordinates;
/// returns the maximum relative error.
pub fn grad_check(model: &ToyModel, batch: &[&Sample]) -> Result<f64, ToyError> {
    grad_check_with(model, batch, LossKind::CrossEntropy, None, 0.0, 0)
}

/// Gradient check against an arbitrary loss configuration; `seed` varies the
/// sampled coordinates.
pub fn grad_check_with(
    model: &ToyModel,
    batch: &[&Sample],
    loss: LossKind,
    reference: Option<&ToyModel>,
    lwf_weight: f64,
    seed: u64,
) -> Result<f64, ToyError> {
    use rand::Rng;

    let (_, grads) = model.loss_and_grads(batch, loss, reference, lwf_weight)?;
    let total = model.num_params();
    let mut rng = stream_rng(seed, "grad-check");
    let coords: Vec<usize> = if total <= GRAD_CHECK_COORDS {
        (0..total).collect()
    } else {
        (0..GRAD_CHECK_COORDS)
            .map(|_| rng.gen_range(0..total))
            .collect()
    };

    let mut max_rel = 0.0f64;
    for flat in coords {
        let analytic = read_flat(&grads, flat);
        let mut plus = model.clone();
        *flat_param_mut(&mut plus, flat) += GRAD_CHECK_STEP;
        let mut minus = model.clone();
        *flat_param_mut(&mut minus, flat) -= GRAD_CHECK_STEP;
        let lp = plus.loss(batch, loss, reference, lwf_weight)?;
        let lm = minus.loss(batch, loss, reference, lwf_weight)?;
        let fd = (lp - lm) / (2.0 * GRAD_CHECK_STEP);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

fn read_flat(grads: &Gradients, mut flat: usize) -> f64 {
    for layer in &grads.layers {
        if flat < layer.weight.len() {
            return layer.weight[flat];
        }
        flat -= layer.weight.len();
        if flat < layer.bias.len() {
            return layer.bias[flat];
        }
        flat -= layer.bias.len();
    }
    unreachable!("flat index out of range")
}

fn flat_param_mut(model: &mut ToyModel, mut flat: usize) -> &mut f64 {
    let layers = model
        .encoder
        .iter_mut()
        .chain(std::iter::once(&mut model.output));
    for layer in layers {
        if flat < layer.weight.len() {
            return &mut layer.weight[flat];
        }
        flat -= layer.weight.len();
        if flat < layer.bias.len() {
            return &mut layer.bias[flat];
        }
        flat -= layer.bias.len();
    }
    unreachable!("flat index out of range")
}
