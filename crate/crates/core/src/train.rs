//! The bi-level training loop and its baselines.
//!
//! One training step follows the one-step-unrolled scheme: estimate the
//! meta-gradient of the held-out target loss with respect to the
//! label-transfer parameters through a virtual SGD step on the main
//! parameters, update alpha, then take the real main-parameter step under
//! the updated alpha. `Method::Xt` keeps the architecture but trains
//! everything jointly on the training loss; `Method::MultiTask` drops the
//! transfer term; `Method::TargetOnly` trains the encoder and target head on
//! the k-shot data alone.
//!
//! The meta-gradient is `-eta * ∇²_{alpha,main} L_train · ∇_{main'} L_meta`,
//! where the second factor is evaluated at the virtually updated main
//! parameters. The mixed product runs in an exact mode (backward-of-
//! backward) or a central-difference mode; both consume identical batches
//! and parameters.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::cell::RefCell;

use crate::data::{Example, SplitSet, TaskKind};
use crate::engine::{self, EpsilonRule, ParamLeaves};
use crate::error::CoreError;
use crate::loss::{
    l_meta_nodes, l_train_nodes, ltn_input_rows, supervised_ce_nodes, Gammas, Instrumentation,
    LtnInputs,
};
use crate::math;
use crate::model::ModelSpec;
use crate::params::{group_vecs_norm, FlatParams, Group, GroupVecs};
use crate::rng::{self, Rng};
use crate::tape::{NodeId, Tape};
use crate::Result;

pub use crate::model::predict;

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MetaXt,
    Xt,
    MultiTask,
    TargetOnly,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MetaXt, Method::Xt, Method::MultiTask, Method::TargetOnly];

    pub fn name(self) -> &'static str {
        match self {
            Method::MetaXt => "metaxt",
            Method::Xt => "xt",
            Method::MultiTask => "multitask",
            Method::TargetOnly => "targetonly",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaGradMode {
    Exact,
    FiniteDifference,
}

impl MetaGradMode {
    pub fn name(self) -> &'static str {
        match self {
            MetaGradMode::Exact => "exact",
            MetaGradMode::FiniteDifference => "fd",
        }
    }

    pub fn from_name(name: &str) -> Option<MetaGradMode> {
        match name {
            "exact" => Some(MetaGradMode::Exact),
            "fd" | "finite_difference" => Some(MetaGradMode::FiniteDifference),
            _ => None,
        }
    }
}

/// Hyper-parameters for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub eta: f64,
    pub meta_lr: f64,
    pub gammas: Gammas,
    pub method: Method,
    pub meta_grad_mode: MetaGradMode,
    pub task_kind: TaskKind,
    pub use_rtn: bool,
    /// Global-norm clip applied to every committed update.
    pub clip_norm: f64,
    pub epsilon_rule: EpsilonRule,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 || self.meta_lr <= 0.0 {
            return Err(CoreError::invalid("learning rates must be positive"));
        }
        if self.clip_norm <= 0.0 {
            return Err(CoreError::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Mutable per-run training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: FlatParams,
    pub step: u64,
    pub rng: Rng,
    pub hyper: TrainHyper,
    pub counters: Instrumentation,
}

impl TrainState {
    pub fn new(params: FlatParams, hyper: TrainHyper, batch_seed: u64) -> Result<Self> {
        hyper.validate()?;
        Ok(TrainState {
            params,
            step: 0,
            rng: rng::from_seed(batch_seed),
            hyper,
            counters: Instrumentation::default(),
        })
    }
}

/// One step's worth of sampled data: a source batch plus the two disjoint
/// halves of a single target batch (training sub-batch and meta sub-batch).
#[derive(Debug, Clone)]
pub struct BatchTriple<'a> {
    pub source: Vec<&'a Example>,
    pub target_train: Vec<&'a Example>,
    pub target_meta: Vec<&'a Example>,
}

/// Sample a batch triple from a split. The target batch is split into
/// halves; with an odd batch the training half gets the extra example.
pub fn sample_batch_triple<'a>(
    rng: &mut Rng,
    split: &'a SplitSet,
    batch_size: usize,
) -> BatchTriple<'a> {
    let n_source = split.source_train.len().min(batch_size);
    let source_idx = rng::sample_indices(rng, split.source_train.len(), n_source);
    let n_target = split.train_k.len().min(batch_size);
    let target_idx = rng::sample_indices(rng, split.train_k.len(), n_target);
    let meta_half = n_target / 2;
    let train_half = n_target - meta_half;
    BatchTriple {
        source: source_idx.iter().map(|&i| &split.source_train[i]).collect(),
        target_train: target_idx[..train_half].iter().map(|&i| &split.train_k[i]).collect(),
        target_meta: target_idx[train_half..].iter().map(|&i| &split.train_k[i]).collect(),
    }
}

/// Scalar values of the training-loss terms at the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValues {
    pub target: f64,
    pub source: f64,
    pub transfer: f64,
    pub total: f64,
}

/// Per-step scalar record emitted to the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub terms: TermValues,
    pub meta_loss: Option<f64>,
    pub meta_grad_norm: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn loss_fn_l_train<'a>(
    spec: &'a ModelSpec,
    batch_t: &'a [&'a Example],
    batch_s: &'a [&'a Example],
    task_kind: TaskKind,
    gammas: Gammas,
    use_rtn: bool,
    ltn_inputs: LtnInputs<'a>,
    counters: &'a RefCell<Instrumentation>,
    terms: &'a RefCell<Option<TermValues>>,
) -> impl engine::LossFn + 'a {
    move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
        let mut c = counters.borrow_mut();
        let nodes = l_train_nodes(
            tape, spec, leaves, batch_t, batch_s, task_kind, &gammas, use_rtn, &ltn_inputs, &mut c,
        )?;
        *terms.borrow_mut() = Some(TermValues {
            target: tape.scalar_value(nodes.target),
            source: nodes.source.map(|n| tape.scalar_value(n)).unwrap_or(0.0),
            transfer: nodes.transfer.map(|n| tape.scalar_value(n)).unwrap_or(0.0),
            total: tape.scalar_value(nodes.total),
        });
        Ok(nodes.total)
    }
}

/// Gradient of the training loss at `params` for `wrt`, with term values.
#[allow(clippy::too_many_arguments)]
fn l_train_grad(
    spec: &ModelSpec,
    params: &FlatParams,
    batch: &BatchTriple<'_>,
    task_kind: TaskKind,
    gammas: Gammas,
    use_rtn: bool,
    wrt: &[Group],
    counters: &mut Instrumentation,
) -> Result<(TermValues, GroupVecs)> {
    let cell = RefCell::new(*counters);
    let terms = RefCell::new(None);
    let loss = loss_fn_l_train(
        spec,
        &batch.target_train,
        &batch.source,
        task_kind,
        gammas,
        use_rtn,
        LtnInputs::FromEncoder,
        &cell,
        &terms,
    );
    let (_, grads) = engine::value_and_grad(&loss, params, wrt)?;
    *counters = *cell.borrow();
    let terms = terms.borrow().expect("loss built");
    Ok((terms, grads))
}

/// Virtual one-step SGD on the main parameter groups:
/// `main' = main - eta * ∇_main L_train(main, alpha)`, alpha untouched.
/// This is the proxy update the meta-gradient differentiates through, so it
/// is deliberately unclipped.
pub fn inner_step(
    spec: &ModelSpec,
    params: &FlatParams,
    batch: &BatchTriple<'_>,
    eta: f64,
    gammas: &Gammas,
    task_kind: TaskKind,
    use_rtn: bool,
    counters: &mut Instrumentation,
) -> Result<FlatParams> {
    let wrt = spec.main_groups();
    let (_, grads) =
        l_train_grad(spec, params, batch, task_kind, *gammas, use_rtn, &wrt, counters)?;
    if let Some(bad) = grads.values().flatten().find(|g| !g.is_finite()) {
        return Err(CoreError::invalid(alloc::format!("non-finite inner gradient {bad}")));
    }
    let mut updated = params.clone();
    updated.axpy_groups(eta, &grads);
    Ok(updated)
}

/// The meta-gradient over alpha:
/// `-eta * ∇²_{alpha,main} L_train(main, alpha) · ∇_{main'} L_meta(main')`
/// with `main' = main - eta ∇_main L_train`. Also returns the meta loss at
/// the virtually updated parameters.
pub fn meta_gradient(
    spec: &ModelSpec,
    params: &FlatParams,
    batch: &BatchTriple<'_>,
    hyper: &TrainHyper,
    counters: &mut Instrumentation,
) -> Result<(Vec<f64>, f64)> {
    let updated = inner_step(
        spec,
        params,
        batch,
        hyper.eta,
        &hyper.gammas,
        hyper.task_kind,
        hyper.use_rtn,
        counters,
    )?;

    let task_kind = hyper.task_kind;
    let meta_batch = &batch.target_meta;
    let meta_loss_fn = move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
        l_meta_nodes(tape, spec, leaves, meta_batch, task_kind)
    };
    let wrt = spec.main_groups();
    let (meta_value, direction) = engine::value_and_grad(&meta_loss_fn, &updated, &wrt)?;

    let alpha_len = params.layout().group(Group::Alpha).map(|l| l.len()).unwrap_or(0);
    if group_vecs_norm(&direction) == 0.0 {
        return Ok((vec![0.0; alpha_len], meta_value));
    }

    // Pin the LTN's representation inputs at the current parameters so the
    // finite-difference mode differentiates the same blocked objective the
    // exact mode does.
    let pinned = ltn_input_rows(spec, params, &batch.source)?;
    let cell = RefCell::new(*counters);
    let terms = RefCell::new(None);
    let train_loss = loss_fn_l_train(
        spec,
        &batch.target_train,
        &batch.source,
        task_kind,
        hyper.gammas,
        hyper.use_rtn,
        LtnInputs::Pinned(&pinned),
        &cell,
        &terms,
    );
    let mixed = match hyper.meta_grad_mode {
        MetaGradMode::Exact => engine::hvp_exact(&train_loss, params, &direction, Group::Alpha)?,
        MetaGradMode::FiniteDifference => {
            engine::hvp_fd(&train_loss, params, &direction, Group::Alpha, hyper.epsilon_rule)?
        }
    };
    *counters = *cell.borrow();
    Ok((mixed.iter().map(|x| -hyper.eta * x).collect(), meta_value))
}

/// Scale gradients down to `max_norm` when their joint norm exceeds it.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut GroupVecs, max_norm: f64) -> f64 {
    let norm = group_vecs_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }
    norm
}

/// Advance the state by one training step on the given batch.
pub fn train_step(
    spec: &ModelSpec,
    state: &mut TrainState,
    batch: &BatchTriple<'_>,
) -> Result<StepRecord> {
    let hyper = state.hyper.clone();
    let record = match hyper.method {
        Method::MetaXt => {
            // Alpha first, then the committed main step under the new alpha.
            let (mut meta_grad, meta_value) =
                meta_gradient(spec, &state.params, batch, &hyper, &mut state.counters)?;
            let norm = math::sqrt(meta_grad.iter().map(|x| x * x).sum());
            let mut update = GroupVecs::new();
            if norm > hyper.clip_norm {
                let factor = hyper.clip_norm / norm;
                for x in meta_grad.iter_mut() {
                    *x *= factor;
                }
            }
            update.insert(Group::Alpha, meta_grad);
            state.params.axpy_groups(hyper.meta_lr, &update);

            let wrt = spec.main_groups();
            let (terms, mut grads) = l_train_grad(
                spec,
                &state.params,
                batch,
                hyper.task_kind,
                hyper.gammas,
                hyper.use_rtn,
                &wrt,
                &mut state.counters,
            )?;
            clip_global_norm(&mut grads, hyper.clip_norm);
            state.params.axpy_groups(hyper.eta, &grads);
            StepRecord {
                step: state.step,
                terms,
                meta_loss: Some(meta_value),
                meta_grad_norm: Some(norm),
            }
        }
        Method::Xt => {
            // Joint descent on everything from one gradient evaluation, no
            // bi-level split. Alpha moves at its own learning rate, same as
            // under the meta update, so the ablation isolates the bi-level
            // formulation rather than alpha mobility. Clipping mirrors the
            // meta path: alpha and the main groups clip separately.
            let mut wrt = spec.main_groups();
            wrt.push(Group::Alpha);
            let (terms, grads) = l_train_grad(
                spec,
                &state.params,
                batch,
                hyper.task_kind,
                hyper.gammas,
                hyper.use_rtn,
                &wrt,
                &mut state.counters,
            )?;
            let mut alpha_part = GroupVecs::new();
            let mut main_part = GroupVecs::new();
            for (g, v) in grads {
                if g == Group::Alpha {
                    alpha_part.insert(g, v);
                } else {
                    main_part.insert(g, v);
                }
            }
            clip_global_norm(&mut alpha_part, hyper.clip_norm);
            clip_global_norm(&mut main_part, hyper.clip_norm);
            state.params.axpy_groups(hyper.meta_lr, &alpha_part);
            state.params.axpy_groups(hyper.eta, &main_part);
            StepRecord { step: state.step, terms, meta_loss: None, meta_grad_norm: None }
        }
        Method::MultiTask => {
            let gammas = Gammas { gamma1: hyper.gammas.gamma1, gamma2: 0.0 };
            let wrt = spec.main_groups();
            let (terms, mut grads) = l_train_grad(
                spec,
                &state.params,
                batch,
                hyper.task_kind,
                gammas,
                hyper.use_rtn,
                &wrt,
                &mut state.counters,
            )?;
            clip_global_norm(&mut grads, hyper.clip_norm);
            state.params.axpy_groups(hyper.eta, &grads);
            StepRecord { step: state.step, terms, meta_loss: None, meta_grad_norm: None }
        }
        Method::TargetOnly => {
            let target_batch = batch.target_train.clone();
            let task_kind = hyper.task_kind;
            let loss = move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
                supervised_ce_nodes(tape, spec, leaves, &target_batch, Group::W, task_kind, false)
            };
            let (value, mut grads) =
                engine::value_and_grad(&loss, &state.params, &[Group::Theta, Group::W])?;
            clip_global_norm(&mut grads, hyper.clip_norm);
            state.params.axpy_groups(hyper.eta, &grads);
            StepRecord {
                step: state.step,
                terms: TermValues { target: value, source: 0.0, transfer: 0.0, total: value },
                meta_loss: None,
                meta_grad_norm: None,
            }
        }
    };
    state.step += 1;
    Ok(record)
}

/// Mean label-transfer output per source label over a sample of source
/// examples: the learned estimate of `P(y_target | y_source)`, one row per
/// source label. Rows with no examples come back empty-flagged as an error.
pub fn ltn_map(
    spec: &ModelSpec,
    params: &FlatParams,
    source_sample: &[Example],
) -> Result<Vec<Vec<f64>>> {
    if source_sample.is_empty() {
        return Err(CoreError::invalid("ltn_map needs source examples"));
    }
    let num_source = spec.source_head.num_classes;
    let num_target = spec.ltn.num_target_classes;
    let mut sums = vec![vec![0.0; num_target]; num_source];
    let mut counts = vec![0usize; num_source];
    for ex in source_sample {
        let soft = crate::model::ltn_forward(spec, params, ex)?;
        for (unit, dist) in soft.iter().enumerate() {
            let y = ex.labels[unit];
            for (acc, &p) in sums[y].iter_mut().zip(dist.probs().iter()) {
                *acc += p;
            }
            counts[y] += 1;
        }
    }
    for (row, &n) in sums.iter_mut().zip(counts.iter()) {
        if n == 0 {
            return Err(CoreError::invalid("a source label has no examples in the sample"));
        }
        for x in row.iter_mut() {
            *x /= n as f64;
        }
    }
    Ok(sums)
}

/// String form of a method list, for diagnostics.
pub fn method_list(methods: &[Method]) -> String {
    let mut s = String::new();
    for (i, m) in methods.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(m.name());
    }
    s
}
