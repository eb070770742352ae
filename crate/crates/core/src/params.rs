//! Named, ordered flat parameter collections.
//!
//! The trainable state of a run is split into five groups: the shared
//! encoder `theta`, the source head `v`, the target head `w`, the optional
//! representation-transfer network `phi`, and the label-transfer network
//! `alpha`. The main-parameter set updated by the inner step is
//! `{theta, v, w}` plus `phi` when configured; `alpha` is the
//! meta-parameter group.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::tape::Shape;
use crate::Result;

/// Parameter group names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Theta,
    V,
    W,
    Phi,
    Alpha,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Theta, Group::V, Group::W, Group::Phi, Group::Alpha];

    pub fn name(self) -> &'static str {
        match self {
            Group::Theta => "theta",
            Group::V => "v",
            Group::W => "w",
            Group::Phi => "phi",
            Group::Alpha => "alpha",
        }
    }

    pub fn from_name(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Per-group tensor shapes, in the order the model consumes them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupLayout {
    pub shapes: Vec<Shape>,
}

impl GroupLayout {
    pub fn new(shapes: Vec<Shape>) -> Self {
        GroupLayout { shapes }
    }

    pub fn len(&self) -> usize {
        self.shapes.iter().map(|s| s.numel()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shapes for every group present in a model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    groups: BTreeMap<Group, GroupLayout>,
}

impl ParamLayout {
    pub fn new(groups: BTreeMap<Group, GroupLayout>) -> Self {
        ParamLayout { groups }
    }

    pub fn group(&self, g: Group) -> Option<&GroupLayout> {
        self.groups.get(&g)
    }

    pub fn groups(&self) -> impl Iterator<Item = (Group, &GroupLayout)> {
        self.groups.iter().map(|(g, l)| (*g, l))
    }

    pub fn has(&self, g: Group) -> bool {
        self.groups.contains_key(&g)
    }

    pub fn total_len(&self) -> usize {
        self.groups.values().map(|l| l.len()).sum()
    }
}

/// Map from group to a flat gradient/direction vector.
pub type GroupVecs = BTreeMap<Group, Vec<f64>>;

/// Euclidean norm over all vectors in a [`GroupVecs`].
pub fn group_vecs_norm(v: &GroupVecs) -> f64 {
    math::sqrt(v.values().flat_map(|g| g.iter()).map(|x| x * x).sum())
}

/// Flat, contiguous values for every parameter group, plus the layout needed
/// to reassemble tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    values: BTreeMap<Group, Vec<f64>>,
    layout: ParamLayout,
}

impl FlatParams {
    /// All-zero parameters for a layout.
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = layout.groups().map(|(g, l)| (g, vec![0.0; l.len()])).collect();
        FlatParams { values, layout }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn group(&self, g: Group) -> &[f64] {
        self.values.get(&g).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        self.values.get_mut(&g).map(|v| v.as_mut_slice()).unwrap_or(&mut [])
    }

    pub fn has(&self, g: Group) -> bool {
        self.values.contains_key(&g)
    }

    pub fn total_len(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    /// Concatenate all groups (ascending `Group` order) into one vector.
    pub fn to_flat_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for v in self.values.values() {
            out.extend_from_slice(v);
        }
        out
    }

    /// Inverse of [`FlatParams::to_flat_vec`] for the same layout.
    pub fn from_flat_vec(layout: ParamLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.total_len() {
            return Err(CoreError::invalid(alloc::format!(
                "flat vector length {} does not match layout length {}",
                flat.len(),
                layout.total_len()
            )));
        }
        let mut values = BTreeMap::new();
        let mut offset = 0;
        for (g, l) in layout.groups() {
            values.insert(g, flat[offset..offset + l.len()].to_vec());
            offset += l.len();
        }
        Ok(FlatParams { values, layout })
    }

    /// `self[group] -= step * delta[group]` for every group in `delta`.
    pub fn axpy_groups(&mut self, step: f64, delta: &GroupVecs) {
        for (g, d) in delta {
            let target = self.values.get_mut(g).expect("group present in params");
            assert_eq!(target.len(), d.len(), "group length mismatch in update");
            for (t, x) in target.iter_mut().zip(d.iter()) {
                *t -= step * x;
            }
        }
    }

    /// Exact bitwise equality, used by the determinism suites.
    pub fn bits_eq(&self, other: &FlatParams) -> bool {
        if self.layout != other.layout {
            return false;
        }
        for (g, v) in &self.values {
            let o = other.group(*g);
            if v.len() != o.len() {
                return false;
            }
            if v.iter().zip(o.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return false;
            }
        }
        true
    }
}

/// Human-readable group list, for diagnostics.
pub fn group_list(groups: &[Group]) -> String {
    let mut s = String::new();
    for (i, g) in groups.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(g.name());
    }
    s
}
