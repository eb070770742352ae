//! Differentiation entry points over [`FlatParams`].
//!
//! A loss is anything that can lay its computation onto a [`Tape`] given
//! leaf nodes for each parameter tensor. The engine provides plain reverse-
//! mode gradients plus the mixed second-order product
//! `∇²_{alpha,main} L · d` in two interchangeable modes: an exact
//! backward-of-backward and a central-difference approximation.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::params::{group_vecs_norm, FlatParams, Group, GroupVecs};
use crate::tape::{NodeId, Tape};
use crate::Result;

/// Tape leaves for each parameter tensor, keyed by group, in layout order.
pub type ParamLeaves = BTreeMap<Group, Vec<NodeId>>;

/// A scalar loss expressed as a tape program over parameter leaves.
pub trait LossFn {
    fn build(&self, tape: &mut Tape, leaves: &ParamLeaves) -> Result<NodeId>;
}

impl<F> LossFn for F
where
    F: Fn(&mut Tape, &ParamLeaves) -> Result<NodeId>,
{
    fn build(&self, tape: &mut Tape, leaves: &ParamLeaves) -> Result<NodeId> {
        self(tape, leaves)
    }
}

/// Create one leaf per tensor of every group in `at`.
pub fn make_leaves(tape: &mut Tape, at: &FlatParams) -> ParamLeaves {
    let mut leaves = ParamLeaves::new();
    for (group, layout) in at.layout().groups() {
        let mut ids = Vec::with_capacity(layout.shapes.len());
        let mut offset = 0;
        for &shape in &layout.shapes {
            let n = shape.numel();
            let value = at.group(group)[offset..offset + n].to_vec();
            ids.push(tape.leaf(value, shape));
            offset += n;
        }
        leaves.insert(group, ids);
    }
    leaves
}

fn check_finite(tape: &Tape) -> Result<()> {
    if let Some((node, op)) = tape.first_nonfinite() {
        return Err(CoreError::NumericalFailure { node: node.index(), op });
    }
    Ok(())
}

/// Evaluate the loss value only.
pub fn eval(loss: &impl LossFn, at: &FlatParams) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, at);
    let node = loss.build(&mut tape, &leaves)?;
    check_finite(&tape)?;
    Ok(tape.scalar_value(node))
}

/// Loss value together with its gradient for the requested groups.
///
/// Groups without any influence on the loss come back as zero vectors;
/// groups not requested are absent from the output.
pub fn value_and_grad(
    loss: &impl LossFn,
    at: &FlatParams,
    wrt: &[Group],
) -> Result<(f64, GroupVecs)> {
    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, at);
    let node = loss.build(&mut tape, &leaves)?;
    check_finite(&tape)?;
    let adj = tape.backward(node);
    check_finite(&tape)?;
    let mut out = GroupVecs::new();
    for &group in wrt {
        let layout = at
            .layout()
            .group(group)
            .ok_or_else(|| CoreError::invalid(alloc::format!("unknown group {}", group.name())))?;
        let mut flat = Vec::with_capacity(layout.len());
        let ids = leaves.get(&group).expect("leaves exist for layout group");
        for (&leaf, &shape) in ids.iter().zip(layout.shapes.iter()) {
            match adj.get(leaf) {
                Some(g) => flat.extend_from_slice(tape.value(g)),
                None => flat.extend(core::iter::repeat(0.0).take(shape.numel())),
            }
        }
        out.insert(group, flat);
    }
    Ok((tape.scalar_value(node), out))
}

/// Gradient of the loss for the requested groups.
pub fn grad(loss: &impl LossFn, at: &FlatParams, wrt: &[Group]) -> Result<GroupVecs> {
    value_and_grad(loss, at, wrt).map(|(_, g)| g)
}

/// Step-size rule for the finite-difference mixed product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonRule {
    /// `eps = c / ||direction||_2`. The conventional choice is `c = 0.01`.
    ScaledByDirection { c: f64 },
    Fixed(f64),
}

impl Default for EpsilonRule {
    fn default() -> Self {
        EpsilonRule::ScaledByDirection { c: 0.01 }
    }
}

impl EpsilonRule {
    pub fn epsilon(&self, direction_norm: f64) -> f64 {
        match *self {
            EpsilonRule::ScaledByDirection { c } => c / direction_norm,
            EpsilonRule::Fixed(eps) => eps,
        }
    }
}

/// `∇²_{wrt, D} L · direction` by central difference, where `D` is the set
/// of groups named in `direction`:
/// `[∇_wrt L(p + eps·d) − ∇_wrt L(p − eps·d)] / (2 eps)`.
pub fn hvp_fd(
    loss: &impl LossFn,
    at: &FlatParams,
    direction: &GroupVecs,
    wrt: Group,
    rule: EpsilonRule,
) -> Result<Vec<f64>> {
    let norm = group_vecs_norm(direction);
    if norm == 0.0 {
        return Err(CoreError::invalid("hvp_fd requires a nonzero direction"));
    }
    let eps = rule.epsilon(norm);

    let mut plus = at.clone();
    plus.axpy_groups(-eps, direction);
    let mut minus = at.clone();
    minus.axpy_groups(eps, direction);

    let gp = grad(loss, &plus, &[wrt])?;
    let gm = grad(loss, &minus, &[wrt])?;
    let gp = gp.get(&wrt).expect("requested group present");
    let gm = gm.get(&wrt).expect("requested group present");
    Ok(gp
        .iter()
        .zip(gm.iter())
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect())
}

/// Exact `∇²_{wrt, D} L · direction`, computed by differentiating the inner
/// product `∇_D L · direction` with respect to `wrt` (backward-of-backward).
pub fn hvp_exact(
    loss: &impl LossFn,
    at: &FlatParams,
    direction: &GroupVecs,
    wrt: Group,
) -> Result<Vec<f64>> {
    let wrt_len = at
        .layout()
        .group(wrt)
        .ok_or_else(|| CoreError::invalid(alloc::format!("unknown group {}", wrt.name())))?
        .len();

    let mut tape = Tape::new();
    let leaves = make_leaves(&mut tape, at);
    let node = loss.build(&mut tape, &leaves)?;
    check_finite(&tape)?;
    let adj = tape.backward(node);

    // s = sum over direction groups of <∇_g L, d_g>, built as tape nodes.
    let mut dot: Option<NodeId> = None;
    for (&group, d) in direction {
        let layout = at
            .layout()
            .group(group)
            .ok_or_else(|| CoreError::invalid(alloc::format!("unknown group {}", group.name())))?;
        if d.len() != layout.len() {
            return Err(CoreError::invalid(alloc::format!(
                "direction length {} does not match group {} length {}",
                d.len(),
                group.name(),
                layout.len()
            )));
        }
        let ids = leaves.get(&group).expect("leaves exist for layout group");
        let mut offset = 0;
        for (&leaf, &shape) in ids.iter().zip(layout.shapes.iter()) {
            let n = shape.numel();
            if let Some(g) = adj.get(leaf) {
                let d_leaf = tape.leaf(d[offset..offset + n].to_vec(), shape);
                let prod = tape.mul(g, d_leaf);
                let term = tape.sum(prod);
                dot = Some(match dot {
                    None => term,
                    Some(acc) => tape.add(acc, term),
                });
            }
            offset += n;
        }
    }

    // No gradient reached any direction group: the mixed product is zero.
    let Some(dot) = dot else {
        return Ok(vec![0.0; wrt_len]);
    };

    let adj2 = tape.backward(dot);
    check_finite(&tape)?;

    let layout = at.layout().group(wrt).expect("checked above");
    let ids = leaves.get(&wrt).expect("leaves exist for layout group");
    let mut out = Vec::with_capacity(wrt_len);
    for (&leaf, &shape) in ids.iter().zip(layout.shapes.iter()) {
        match adj2.get(leaf) {
            Some(g) => out.extend_from_slice(tape.value(g)),
            None => out.extend(core::iter::repeat(0.0).take(shape.numel())),
        }
    }
    Ok(out)
}
