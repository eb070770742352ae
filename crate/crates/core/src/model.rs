//! The shared encoder, task heads, label-transfer network, and the optional
//! representation-transfer network.
//!
//! Forward passes are expressed twice: as tape programs (`*_nodes`, consumed
//! by the loss builders and the trainer) and as plain value-level operations
//! that build a throwaway tape internally (used for prediction, analysis,
//! and tests). Both routes share the same node builders, so there is exactly
//! one definition of each forward computation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Example;
use crate::engine::{make_leaves, ParamLeaves};
use crate::error::CoreError;
use crate::loss::SoftLabel;
use crate::params::{FlatParams, Group, GroupLayout, ParamLayout};
use crate::rng::{self, Rng};
use crate::tape::{NodeId, Shape, Tape};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Shared encoder: an MLP with `hidden_dims.len() + 1` layers ending in an
/// `h_dim`-wide representation, the activation applied after every layer.
/// `rtn_insert_layer` (1-based, strictly before the last layer) marks where
/// the representation-transfer hook sits when configured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub h_dim: usize,
    pub activation: Activation,
    pub rtn_insert_layer: Option<usize>,
}

impl EncoderSpec {
    /// Widths `[input_dim, hidden..., h_dim]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.h_dim);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Default hook position: the middle layer, rounded up.
    pub fn middle_layer(&self) -> usize {
        self.num_layers().div_ceil(2).max(1)
    }

    /// Width of the activation the RTN transforms.
    pub fn rtn_width(&self) -> Option<usize> {
        self.rtn_insert_layer.map(|l| self.layer_dims()[l])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.h_dim == 0 {
            return Err(CoreError::invalid("encoder dims must be positive"));
        }
        if let Some(l) = self.rtn_insert_layer {
            let max = self.num_layers() - 1;
            if l < 1 || l > max {
                return Err(CoreError::invalid(format!(
                    "rtn_insert_layer {l} out of range [1, {max}]"
                )));
            }
        }
        Ok(())
    }
}

/// A linear-plus-softmax classification head over the representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskHeadSpec {
    pub h_dim: usize,
    pub num_classes: usize,
    pub applies_per_token: bool,
}

impl TaskHeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CoreError::invalid("task heads need at least two classes"));
        }
        Ok(())
    }
}

/// Label-transfer network: three feed-forward layers over the concatenation
/// of a representation (width `h_dim`) and a source-label embedding (width
/// `z_dim`), softmax output over the target classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LtnSpec {
    pub h_dim: usize,
    pub z_dim: usize,
    pub hidden: usize,
    pub num_target_classes: usize,
}

impl LtnSpec {
    pub fn input_dim(&self) -> usize {
        self.h_dim + self.z_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden == 0 {
            return Err(CoreError::invalid("ltn dims must be positive"));
        }
        Ok(())
    }
}

/// Full model description for one task pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub source_head: TaskHeadSpec,
    pub target_head: TaskHeadSpec,
    pub ltn: LtnSpec,
}

/// Dimension knobs with the library defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub hidden_dims: Vec<usize>,
    pub h_dim: usize,
    pub z_dim: usize,
    pub ltn_hidden: Option<usize>,
    pub activation: Activation,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            hidden_dims: vec![64, 32],
            h_dim: 32,
            z_dim: 8,
            ltn_hidden: None, // defaults to h_dim, keeping the LTN lightweight
            activation: Activation::Tanh,
        }
    }
}

impl ModelSpec {
    /// Assemble a spec for a task pair. With `use_rtn` the hook goes to the
    /// middle encoder layer.
    pub fn for_task(
        input_dim: usize,
        num_source_classes: usize,
        num_target_classes: usize,
        per_token: bool,
        dims: &ModelDims,
        use_rtn: bool,
    ) -> Result<ModelSpec> {
        let mut encoder = EncoderSpec {
            input_dim,
            hidden_dims: dims.hidden_dims.clone(),
            h_dim: dims.h_dim,
            activation: dims.activation,
            rtn_insert_layer: None,
        };
        if use_rtn {
            encoder.rtn_insert_layer = Some(encoder.middle_layer());
        }
        let spec = ModelSpec {
            encoder,
            source_head: TaskHeadSpec {
                h_dim: dims.h_dim,
                num_classes: num_source_classes,
                applies_per_token: per_token,
            },
            target_head: TaskHeadSpec {
                h_dim: dims.h_dim,
                num_classes: num_target_classes,
                applies_per_token: per_token,
            },
            ltn: LtnSpec {
                h_dim: dims.h_dim,
                z_dim: dims.z_dim,
                hidden: dims.ltn_hidden.unwrap_or(dims.h_dim),
                num_target_classes,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn has_rtn(&self) -> bool {
        self.encoder.rtn_insert_layer.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.source_head.validate()?;
        self.target_head.validate()?;
        self.ltn.validate()?;
        if self.source_head.h_dim != self.encoder.h_dim
            || self.target_head.h_dim != self.encoder.h_dim
            || self.ltn.h_dim != self.encoder.h_dim
        {
            return Err(CoreError::invalid("head/ltn h_dim must match the encoder h_dim"));
        }
        if self.ltn.num_target_classes != self.target_head.num_classes {
            return Err(CoreError::invalid("ltn must output over the target classes"));
        }
        Ok(())
    }

    /// Groups updated by the main (inner) step: the encoder, both heads, and
    /// the RTN when configured. Alpha is always the meta group.
    pub fn main_groups(&self) -> Vec<Group> {
        let mut groups = vec![Group::Theta, Group::V, Group::W];
        if self.has_rtn() {
            groups.push(Group::Phi);
        }
        groups
    }

    fn head_shapes(head: &TaskHeadSpec) -> Vec<Shape> {
        vec![Shape::new(head.h_dim, head.num_classes), Shape::new(1, head.num_classes)]
    }

    pub fn layout(&self) -> ParamLayout {
        let mut groups = BTreeMap::new();

        let dims = self.encoder.layer_dims();
        let mut theta = Vec::new();
        for w in dims.windows(2) {
            theta.push(Shape::new(w[0], w[1]));
            theta.push(Shape::new(1, w[1]));
        }
        groups.insert(Group::Theta, GroupLayout::new(theta));

        groups.insert(Group::V, GroupLayout::new(Self::head_shapes(&self.source_head)));
        groups.insert(Group::W, GroupLayout::new(Self::head_shapes(&self.target_head)));

        if let Some(width) = self.encoder.rtn_width() {
            let mut phi = Vec::new();
            for _ in 0..3 {
                phi.push(Shape::new(width, width));
                phi.push(Shape::new(1, width));
            }
            groups.insert(Group::Phi, GroupLayout::new(phi));
        }

        let ltn = &self.ltn;
        let alpha = vec![
            Shape::new(self.source_head.num_classes, ltn.z_dim), // label embedding
            Shape::new(ltn.input_dim(), ltn.hidden),
            Shape::new(1, ltn.hidden),
            Shape::new(ltn.hidden, ltn.hidden),
            Shape::new(1, ltn.hidden),
            Shape::new(ltn.hidden, ltn.num_target_classes),
            Shape::new(1, ltn.num_target_classes),
        ];
        groups.insert(Group::Alpha, GroupLayout::new(alpha));

        ParamLayout::new(groups)
    }

    pub fn param_count(&self, group: Group) -> usize {
        self.layout().group(group).map(|l| l.len()).unwrap_or(0)
    }

    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero, embeddings treated as weight rows. The LTN output layer starts
    /// at a tenth of that scale so untrained pseudo-labels are near-uniform.
    pub fn init_params(&self, rng: &mut Rng) -> FlatParams {
        let layout = self.layout();
        let mut params = FlatParams::zeros(layout.clone());
        for (group, group_layout) in layout.groups() {
            let values = params.group_mut(group);
            let mut offset = 0;
            for (tensor_idx, &shape) in group_layout.shapes.iter().enumerate() {
                let n = shape.numel();
                let is_bias = shape.rows == 1 && !(group == Group::Alpha && tensor_idx == 0);
                if !is_bias {
                    let mut scale = 1.0 / crate::math::sqrt(shape.rows as f64);
                    // LTN output layer (second-to-last alpha tensor).
                    if group == Group::Alpha && tensor_idx == group_layout.shapes.len() - 2 {
                        scale *= 0.1;
                    }
                    for x in values[offset..offset + n].iter_mut() {
                        *x = rng::uniform(rng, -scale, scale);
                    }
                }
                offset += n;
            }
        }
        params
    }

    // ── Tape-level forward builders ─────────────────────────────────────

    /// Encoder forward over a `rows x input_dim` input node. When
    /// `apply_rtn` is set the activation after the hook layer passes through
    /// the three RTN layers before continuing.
    pub fn encode_nodes(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        x: NodeId,
        apply_rtn: bool,
    ) -> Result<NodeId> {
        if tape.shape(x).cols != self.encoder.input_dim {
            return Err(CoreError::invalid(format!(
                "input width {} does not match encoder input_dim {}",
                tape.shape(x).cols,
                self.encoder.input_dim
            )));
        }
        if apply_rtn && !self.has_rtn() {
            return Err(CoreError::invalid("apply_rtn requested but no RTN is configured"));
        }
        let theta = leaves
            .get(&Group::Theta)
            .ok_or_else(|| CoreError::invalid("theta leaves missing"))?;
        let rows = tape.shape(x).rows;
        let mut h = x;
        for (layer, pair) in theta.chunks(2).enumerate() {
            h = self.linear(tape, h, pair[0], pair[1], rows);
            h = self.activate(tape, h);
            if apply_rtn && self.encoder.rtn_insert_layer == Some(layer + 1) {
                let phi = leaves
                    .get(&Group::Phi)
                    .ok_or_else(|| CoreError::invalid("phi leaves missing"))?;
                for rtn_layer in phi.chunks(2) {
                    h = self.linear(tape, h, rtn_layer[0], rtn_layer[1], rows);
                    h = self.activate(tape, h);
                }
            }
        }
        Ok(h)
    }

    /// Head probabilities for the representation rows: softmax(h W + b).
    pub fn head_nodes(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        head_group: Group,
        h: NodeId,
    ) -> Result<NodeId> {
        let head = leaves
            .get(&head_group)
            .ok_or_else(|| CoreError::invalid("head leaves missing"))?;
        let rows = tape.shape(h).rows;
        let logits = self.linear(tape, h, head[0], head[1], rows);
        Ok(tape.softmax_rows(logits))
    }

    /// Label-transfer forward: concatenate (detached) representations with
    /// the rows of the label embedding selected by `labels`, run the three
    /// LTN layers, softmax over target classes. The caller is responsible
    /// for detaching `h` — the LTN treats the representation as a constant
    /// input, so no gradient reaches the encoder through this path.
    pub fn ltn_nodes(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        h: NodeId,
        labels: &[usize],
    ) -> Result<NodeId> {
        let alpha = leaves
            .get(&Group::Alpha)
            .ok_or_else(|| CoreError::invalid("alpha leaves missing"))?;
        let rows = tape.shape(h).rows;
        if labels.len() != rows {
            return Err(CoreError::invalid("one source label required per representation row"));
        }
        let num_source = self.source_head.num_classes;
        for &y in labels {
            if y >= num_source {
                return Err(CoreError::invalid(format!(
                    "source label {y} out of range (<{num_source})"
                )));
            }
        }
        // Embedding lookup as a constant one-hot matrix times E, which keeps
        // the lookup differentiable with respect to E.
        let mut onehot = vec![0.0; rows * num_source];
        for (r, &y) in labels.iter().enumerate() {
            onehot[r * num_source + y] = 1.0;
        }
        let onehot = tape.leaf(onehot, Shape::new(rows, num_source));
        let emb = tape.matmul(onehot, alpha[0]);
        let mut z = tape.concat_cols(h, emb);
        for (i, layer) in alpha[1..].chunks(2).enumerate() {
            z = self.linear(tape, z, layer[0], layer[1], rows);
            if i < 2 {
                z = self.activate(tape, z);
            }
        }
        Ok(tape.softmax_rows(z))
    }

    fn linear(&self, tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId, rows: usize) -> NodeId {
        let xw = tape.matmul(x, w);
        let bb = tape.broadcast_rows(b, rows);
        tape.add(xw, bb)
    }

    fn activate(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self.encoder.activation {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Stack example features into a `units x input_dim` leaf.
pub fn features_leaf(tape: &mut Tape, features: &[Vec<f64>]) -> NodeId {
    let rows = features.len();
    let cols = features.first().map(|f| f.len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(rows * cols);
    for f in features {
        flat.extend_from_slice(f);
    }
    tape.leaf(flat, Shape::new(rows, cols))
}

// ── Value-level operations ──────────────────────────────────────────────

/// Encoder representations for an example: one `h_dim` vector per unit.
pub fn encode(
    spec: &ModelSpec,
    params: &FlatParams,
    x: &Example,
    apply_rtn: bool,
) -> Result<Vec<Vec<f64>>> {
    x.validate(spec.encoder.input_dim, usize::MAX)?;
    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, params);
    let input = features_leaf(&mut tape, &x.features);
    let h = spec.encode_nodes(&mut tape, &leaves, input, apply_rtn)?;
    let h_dim = spec.encoder.h_dim;
    Ok(tape.value(h).chunks(h_dim).map(|c| c.to_vec()).collect())
}

/// Probability vector from one head over a single representation.
pub fn head_forward(
    spec: &ModelSpec,
    params: &FlatParams,
    head_group: Group,
    h: &[f64],
) -> Result<Vec<f64>> {
    if h.len() != spec.encoder.h_dim {
        return Err(CoreError::invalid(format!(
            "representation width {} does not match h_dim {}",
            h.len(),
            spec.encoder.h_dim
        )));
    }
    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, params);
    let h = tape.leaf_row(h.to_vec());
    let p = spec.head_nodes(&mut tape, &leaves, head_group, h)?;
    Ok(tape.value(p).to_vec())
}

/// Transferred soft labels for a source example, one per prediction unit.
/// The representation is computed under theta with no RTN and consumed as a
/// constant, so the output is differentiable in alpha only.
pub fn ltn_forward(spec: &ModelSpec, params: &FlatParams, x: &Example) -> Result<Vec<SoftLabel>> {
    x.validate(spec.encoder.input_dim, spec.source_head.num_classes)?;
    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, params);
    let input = features_leaf(&mut tape, &x.features);
    let h = spec.encode_nodes(&mut tape, &leaves, input, false)?;
    let h = tape.detach(h);
    let probs = spec.ltn_nodes(&mut tape, &leaves, h, &x.labels)?;
    let c = spec.ltn.num_target_classes;
    tape.value(probs).chunks(c).map(|row| SoftLabel::new(row.to_vec())).collect()
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inference-time prediction: argmax of the target head, per unit. Only the
/// theta and w groups are read; the LTN, source head, and RTN play no part.
pub fn predict(spec: &ModelSpec, params: &FlatParams, x: &Example) -> Result<Vec<usize>> {
    x.validate(spec.encoder.input_dim, usize::MAX)?;
    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, params);
    let input = features_leaf(&mut tape, &x.features);
    let h = spec.encode_nodes(&mut tape, &leaves, input, false)?;
    let probs = spec.head_nodes(&mut tape, &leaves, Group::W, h)?;
    let c = spec.target_head.num_classes;
    Ok(tape.value(probs).chunks(c).map(argmax).collect())
}
