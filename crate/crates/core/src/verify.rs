//! Numerical verification suite.
//!
//! Everything the `check-grads` command reports lives here so the test
//! suites and the CLI run exactly the same checks: per-primitive adjoints
//! against central finite differences, whole-network gradients, agreement of
//! the two mixed-product modes, and the meta-gradient against coordinate
//! finite differences of the one-step proxy objective.
//!
//! The finite-difference helpers are deliberately independent of the reverse
//! pass: they evaluate freshly built forward tapes only.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Example, TaskKind};
use crate::engine::{self, EpsilonRule, ParamLeaves};
use crate::loss::{l_meta_nodes, ltn_input_rows, Gammas, Instrumentation, LtnInputs};
use crate::math;
use crate::model::{Activation, ModelDims, ModelSpec};
use crate::params::{group_vecs_norm, FlatParams, Group, GroupVecs};
use crate::rng::{self, Rng};
use crate::tape::{NodeId, Shape, Tape};
use crate::train::{inner_step, BatchTriple};
use crate::Result;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckReport { name: name.into(), passed: true, detail: detail.into() }
    }

    fn fail(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckReport { name: name.into(), passed: false, detail: detail.into() }
    }
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe);
        probe[i] = x[i] - step;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Worst relative coordinate error with an absolute floor.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| math::abs(x - y) / (math::max(math::abs(x), math::abs(y)) + floor))
        .fold(0.0, math::max)
}

/// Worst excess over a combined tolerance `|a-b| <= rel*max(|a|,|b|) + abs`,
/// as a multiple of the tolerance. Values <= 1 pass. The absolute slack
/// absorbs central-difference round-off (~1e-11) on near-zero coordinates.
pub fn max_tol_excess(a: &[f64], b: &[f64], rel: f64, abs: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| math::abs(x - y) / (rel * math::max(math::abs(x), math::abs(y)) + abs))
        .fold(0.0, math::max)
}

// ── Per-primitive adjoint checks ─────────────────────────────────────────

struct PrimitiveCase {
    name: &'static str,
    shapes: Vec<Shape>,
    ranges: Vec<(f64, f64)>,
    build: fn(&mut Tape, &[NodeId]) -> NodeId,
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    fn sym() -> (f64, f64) {
        (-2.0, 2.0)
    }
    fn pos() -> (f64, f64) {
        (0.2, 2.0)
    }
    vec![
        PrimitiveCase {
            name: "add",
            shapes: vec![Shape::new(2, 3), Shape::new(2, 3)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.add(x[0], x[1]),
        },
        PrimitiveCase {
            name: "sub",
            shapes: vec![Shape::new(2, 3), Shape::new(2, 3)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.sub(x[0], x[1]),
        },
        PrimitiveCase {
            name: "mul",
            shapes: vec![Shape::new(2, 3), Shape::new(2, 3)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.mul(x[0], x[1]),
        },
        PrimitiveCase {
            name: "scale",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![sym()],
            build: |t, x| t.scale(x[0], 1.7),
        },
        PrimitiveCase {
            name: "matmul",
            shapes: vec![Shape::new(2, 3), Shape::new(3, 2)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.matmul(x[0], x[1]),
        },
        PrimitiveCase {
            name: "matmul_ta",
            shapes: vec![Shape::new(3, 2), Shape::new(3, 2)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.matmul_t(x[0], x[1], true, false),
        },
        PrimitiveCase {
            name: "matmul_tb",
            shapes: vec![Shape::new(2, 3), Shape::new(2, 3)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.matmul_t(x[0], x[1], false, true),
        },
        PrimitiveCase {
            name: "matmul_ta_tb",
            shapes: vec![Shape::new(3, 2), Shape::new(2, 3)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.matmul_t(x[0], x[1], true, true),
        },
        PrimitiveCase {
            name: "tanh",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![sym()],
            build: |t, x| t.tanh(x[0]),
        },
        PrimitiveCase {
            name: "relu",
            shapes: vec![Shape::new(2, 3)],
            // Keep clear of the kink so central differences are valid.
            ranges: vec![(0.1, 2.0)],
            build: |t, x| t.relu(x[0]),
        },
        PrimitiveCase {
            name: "relu_negative",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![(-2.0, -0.1)],
            build: |t, x| t.relu(x[0]),
        },
        PrimitiveCase {
            name: "softmax",
            shapes: vec![Shape::new(2, 4)],
            ranges: vec![sym()],
            build: |t, x| t.softmax_rows(x[0]),
        },
        PrimitiveCase {
            name: "log",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![pos()],
            build: |t, x| t.log(x[0]),
        },
        PrimitiveCase {
            name: "recip",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![pos()],
            build: |t, x| t.recip(x[0]),
        },
        PrimitiveCase {
            name: "clamp_min",
            shapes: vec![Shape::new(2, 3)],
            // Values on both sides of the clamp at 0.5, away from it.
            ranges: vec![(0.7, 2.0)],
            build: |t, x| t.clamp_min(x[0], 0.5),
        },
        PrimitiveCase {
            name: "clamp_min_below",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![(-2.0, 0.3)],
            build: |t, x| t.clamp_min(x[0], 0.5),
        },
        PrimitiveCase {
            name: "sum",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![sym()],
            build: |t, x| t.sum(x[0]),
        },
        PrimitiveCase {
            name: "broadcast_scalar",
            shapes: vec![Shape::new(1, 1)],
            ranges: vec![sym()],
            build: |t, x| t.broadcast_scalar(x[0], Shape::new(2, 3)),
        },
        PrimitiveCase {
            name: "row_sum",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![sym()],
            build: |t, x| t.row_sum(x[0]),
        },
        PrimitiveCase {
            name: "broadcast_cols",
            shapes: vec![Shape::new(3, 1)],
            ranges: vec![sym()],
            build: |t, x| t.broadcast_cols(x[0], 4),
        },
        PrimitiveCase {
            name: "col_sum",
            shapes: vec![Shape::new(2, 3)],
            ranges: vec![sym()],
            build: |t, x| t.col_sum(x[0]),
        },
        PrimitiveCase {
            name: "broadcast_rows",
            shapes: vec![Shape::new(1, 3)],
            ranges: vec![sym()],
            build: |t, x| t.broadcast_rows(x[0], 4),
        },
        PrimitiveCase {
            name: "concat_cols",
            shapes: vec![Shape::new(2, 2), Shape::new(2, 3)],
            ranges: vec![sym(), sym()],
            build: |t, x| t.concat_cols(x[0], x[1]),
        },
        PrimitiveCase {
            name: "slice_cols",
            shapes: vec![Shape::new(2, 4)],
            ranges: vec![sym()],
            build: |t, x| t.slice_cols(x[0], 1, 2),
        },
        PrimitiveCase {
            name: "pad_cols",
            shapes: vec![Shape::new(2, 2)],
            ranges: vec![sym()],
            build: |t, x| t.pad_cols(x[0], 1, 4),
        },
        PrimitiveCase {
            name: "select_row",
            shapes: vec![Shape::new(3, 2)],
            ranges: vec![sym()],
            build: |t, x| t.select_row(x[0], 1),
        },
        PrimitiveCase {
            name: "scatter_row",
            shapes: vec![Shape::new(1, 3)],
            ranges: vec![sym()],
            build: |t, x| t.scatter_row(x[0], 2, 4),
        },
    ]
}

/// Check the reverse-mode adjoint of every primitive against a central
/// finite difference (step 1e-5) on seeded random inputs.
pub fn check_primitive_gradients(seed: u64) -> Vec<CheckReport> {
    let mut rng = rng::from_seed(seed);
    let mut reports = Vec::new();
    for case in primitive_cases() {
        let inputs: Vec<Vec<f64>> = case
            .shapes
            .iter()
            .zip(case.ranges.iter())
            .map(|(shape, &(lo, hi))| {
                (0..shape.numel()).map(|_| rng::uniform(&mut rng, lo, hi)).collect()
            })
            .collect();
        // Random weighting of the output so adjoints are non-uniform.
        let weights: Vec<f64> = {
            let mut t = Tape::new();
            let leaves: Vec<NodeId> = inputs
                .iter()
                .zip(case.shapes.iter())
                .map(|(v, &s)| t.leaf(v.clone(), s))
                .collect();
            let out = (case.build)(&mut t, &leaves);
            (0..t.shape(out).numel()).map(|_| rng::uniform(&mut rng, -1.0, 1.0)).collect()
        };

        let eval = |xs: &[Vec<f64>]| -> (f64, Vec<Vec<f64>>) {
            let mut t = Tape::new();
            let leaves: Vec<NodeId> =
                xs.iter().zip(case.shapes.iter()).map(|(v, &s)| t.leaf(v.clone(), s)).collect();
            let out = (case.build)(&mut t, &leaves);
            let w = t.leaf(weights.clone(), t.shape(out));
            let prod = t.mul(out, w);
            let loss = t.sum(prod);
            let adj = t.backward(loss);
            let grads = leaves
                .iter()
                .zip(case.shapes.iter())
                .map(|(&l, &s)| match adj.get(l) {
                    Some(g) => t.value(g).to_vec(),
                    None => vec![0.0; s.numel()],
                })
                .collect();
            (t.scalar_value(loss), grads)
        };

        let (_, reverse_grads) = eval(&inputs);
        let mut worst = 0.0f64;
        for leaf_idx in 0..inputs.len() {
            let mut f = |x: &[f64]| -> f64 {
                let mut probe = inputs.clone();
                probe[leaf_idx] = x.to_vec();
                eval(&probe).0
            };
            let fd = fd_gradient(&mut f, &inputs[leaf_idx], 1e-5);
            worst = math::max(worst, max_rel_err(&reverse_grads[leaf_idx], &fd, 1e-9));
        }
        if worst <= 1e-6 {
            reports.push(CheckReport::pass(
                format!("primitive/{}", case.name),
                format!("max relative error {worst:.2e}"),
            ));
        } else {
            reports.push(CheckReport::fail(
                format!("primitive/{}", case.name),
                format!("max relative error {worst:.2e} exceeds 1e-6"),
            ));
        }
    }
    reports
}

// ── Random tiny model instances ──────────────────────────────────────────

/// A self-contained random model/batch instance small enough for
/// coordinate-wise finite differences.
pub struct TinyInstance {
    pub spec: ModelSpec,
    pub params: FlatParams,
    pub source: Vec<Example>,
    pub target_train: Vec<Example>,
    pub target_meta: Vec<Example>,
    pub gammas: Gammas,
    pub eta: f64,
}

impl TinyInstance {
    pub fn batch(&self) -> BatchTriple<'_> {
        BatchTriple {
            source: self.source.iter().collect(),
            target_train: self.target_train.iter().collect(),
            target_meta: self.target_meta.iter().collect(),
        }
    }

    pub fn total_params(&self) -> usize {
        self.params.total_len()
    }
}

fn random_examples(rng: &mut Rng, n: usize, input_dim: usize, num_classes: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let feats: Vec<f64> = (0..input_dim).map(|_| rng::uniform(rng, -1.5, 1.5)).collect();
            Example::sequence(feats, rng::below(rng, num_classes))
        })
        .collect()
}

/// Build a random instance with at most 200 parameters.
pub fn random_tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = rng::from_seed(seed);
    let input_dim = 2 + rng::below(&mut rng, 2);
    let hidden = 2 + rng::below(&mut rng, 2);
    let h_dim = 2 + rng::below(&mut rng, 2);
    let num_target = 2 + rng::below(&mut rng, 2);
    let spec = ModelSpec::for_task(
        input_dim,
        2,
        num_target,
        false,
        &ModelDims {
            hidden_dims: vec![hidden],
            h_dim,
            z_dim: 2,
            ltn_hidden: Some(2),
            activation: Activation::Tanh,
        },
        false,
    )
    .expect("tiny spec is valid");
    let params = spec.init_params(&mut rng);
    assert!(params.total_len() <= 200, "instance exceeds 200 parameters");
    let source = random_examples(&mut rng, 3, input_dim, 2);
    let target_train = random_examples(&mut rng, 2, input_dim, num_target);
    let target_meta = random_examples(&mut rng, 2, input_dim, num_target);
    TinyInstance {
        spec,
        params,
        source,
        target_train,
        target_meta,
        gammas: Gammas { gamma1: 0.7, gamma2: 1.0 },
        eta: 0.05 + rng::uniform(&mut rng, 0.0, 0.05),
    }
}

/// Coordinate-wise central finite difference of the one-step proxy
/// objective `J(alpha) = L_meta(main - eta ∇_main L_train(main, alpha))`.
/// Independent oracle for the meta-gradient: uses only first-order
/// gradients and forward evaluations.
#[allow(clippy::too_many_arguments)]
pub fn proxy_meta_fd(
    spec: &ModelSpec,
    params: &FlatParams,
    batch: &BatchTriple<'_>,
    eta: f64,
    gammas: &Gammas,
    task_kind: TaskKind,
    use_rtn: bool,
    step: f64,
) -> Result<Vec<f64>> {
    let alpha_len = params.layout().group(Group::Alpha).map(|l| l.len()).unwrap_or(0);
    let eval_proxy = |p: &FlatParams| -> Result<f64> {
        let mut counters = Instrumentation::default();
        let updated = inner_step(spec, p, batch, eta, gammas, task_kind, use_rtn, &mut counters)?;
        let meta_batch = &batch.target_meta;
        let meta = move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
            l_meta_nodes(tape, spec, leaves, meta_batch, task_kind)
        };
        engine::eval(&meta, &updated)
    };
    let mut out = vec![0.0; alpha_len];
    for i in 0..alpha_len {
        let mut plus = params.clone();
        plus.group_mut(Group::Alpha)[i] += step;
        let mut minus = params.clone();
        minus.group_mut(Group::Alpha)[i] -= step;
        out[i] = (eval_proxy(&plus)? - eval_proxy(&minus)?) / (2.0 * step);
    }
    Ok(out)
}

/// Whole-network gradient check: reverse-mode gradient of the training loss
/// against finite differences over every parameter group. The LTN inputs
/// are pinned at the base parameters, since the encoder gradient is blocked
/// on that path by design; a free-floating finite difference would measure
/// the blocked path too.
pub fn check_network_gradients(seed: u64, instances: usize) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    for i in 0..instances {
        let inst = random_tiny_instance(seed.wrapping_add(i as u64).wrapping_mul(2654435761));
        let batch = inst.batch();
        let pinned = ltn_input_rows(&inst.spec, &inst.params, &batch.source)
            .expect("representations are finite");
        let counters = core::cell::RefCell::new(Instrumentation::default());
        let spec = &inst.spec;
        let gammas = inst.gammas;
        let loss = |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
            let mut c = counters.borrow_mut();
            crate::loss::l_train_nodes(
                tape,
                spec,
                leaves,
                &batch.target_train,
                &batch.source,
                TaskKind::SequenceClassification,
                &gammas,
                false,
                &LtnInputs::Pinned(&pinned),
                &mut c,
            )
            .map(|n| n.total)
        };
        let groups: Vec<Group> = inst.params.layout().groups().map(|(g, _)| g).collect();
        let grads = match engine::grad(&loss, &inst.params, &groups) {
            Ok(g) => g,
            Err(e) => {
                reports.push(CheckReport::fail(format!("network-grad/{i}"), format!("{e}")));
                continue;
            }
        };
        let flat = inst.params.to_flat_vec();
        let layout = inst.params.layout().clone();
        let mut f = |x: &[f64]| -> f64 {
            let p = FlatParams::from_flat_vec(layout.clone(), x).expect("same layout");
            engine::eval(&loss, &p).expect("finite loss")
        };
        let fd = fd_gradient(&mut f, &flat, 1e-5);
        let reverse: Vec<f64> = groups.iter().flat_map(|g| grads[g].iter().copied()).collect();
        let excess = max_tol_excess(&reverse, &fd, 1e-6, 1e-9);
        if excess <= 1.0 {
            reports.push(CheckReport::pass(
                format!("network-grad/{i}"),
                format!("{} params, worst error at {excess:.2}x tolerance", inst.total_params()),
            ));
        } else {
            reports.push(CheckReport::fail(
                format!("network-grad/{i}"),
                format!("worst error {excess:.2}x beyond 1e-6 relative + 1e-9 absolute"),
            ));
        }
    }
    reports
}

/// Agreement of the exact and finite-difference mixed products on random
/// small networks: `||fd - exact|| <= 10 eps * max(1, ||exact||)`.
pub fn check_hvp_agreement(seed: u64, instances: usize) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    for i in 0..instances {
        let inst = random_tiny_instance(seed.wrapping_add(7919 * i as u64));
        let batch = inst.batch();
        let pinned = ltn_input_rows(&inst.spec, &inst.params, &batch.source)
            .expect("representations are finite");
        let counters = core::cell::RefCell::new(Instrumentation::default());
        let spec = &inst.spec;
        let gammas = inst.gammas;
        let loss = |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
            let mut c = counters.borrow_mut();
            crate::loss::l_train_nodes(
                tape,
                spec,
                leaves,
                &batch.target_train,
                &batch.source,
                TaskKind::SequenceClassification,
                &gammas,
                false,
                &LtnInputs::Pinned(&pinned),
                &mut c,
            )
            .map(|n| n.total)
        };
        // A synthetic direction over the main groups.
        let mut dir_rng = rng::from_seed(seed ^ (i as u64) << 17);
        let mut direction = GroupVecs::new();
        for (g, l) in inst.params.layout().groups() {
            if g != Group::Alpha {
                direction
                    .insert(g, (0..l.len()).map(|_| rng::uniform(&mut dir_rng, -1.0, 1.0)).collect());
            }
        }
        let rule = EpsilonRule::default();
        let eps = rule.epsilon(group_vecs_norm(&direction));
        let exact = engine::hvp_exact(&loss, &inst.params, &direction, Group::Alpha);
        let fd = engine::hvp_fd(&loss, &inst.params, &direction, Group::Alpha, rule);
        match (exact, fd) {
            (Ok(exact), Ok(fd)) => {
                let diff: f64 = math::sqrt(
                    exact.iter().zip(fd.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
                );
                let norm: f64 = math::sqrt(exact.iter().map(|x| x * x).sum());
                let tol = 10.0 * eps * math::max(1.0, norm);
                if diff <= tol {
                    reports.push(CheckReport::pass(
                        format!("hvp-agreement/{i}"),
                        format!("||fd - exact|| = {diff:.2e} <= {tol:.2e}"),
                    ));
                } else {
                    reports.push(CheckReport::fail(
                        format!("hvp-agreement/{i}"),
                        format!("||fd - exact|| = {diff:.2e} exceeds {tol:.2e}"),
                    ));
                }
            }
            (e, f) => {
                reports.push(CheckReport::fail(
                    format!("hvp-agreement/{i}"),
                    format!("exact: {:?}, fd: {:?}", e.err(), f.err()),
                ));
            }
        }
    }
    reports
}

/// The central check: the exact meta-gradient against coordinate central
/// differences of the proxy objective (1e-3 relative, 1e-8 floor), and the
/// fd-mode meta-gradient against the exact mode (1e-2 relative).
pub fn check_meta_gradient(seed: u64, instances: usize) -> Vec<CheckReport> {
    use crate::train::{meta_gradient, MetaGradMode, Method, TrainHyper};
    let mut reports = Vec::new();
    for i in 0..instances {
        let inst = random_tiny_instance(seed.wrapping_add(104729 * i as u64));
        let batch = inst.batch();
        let base = TrainHyper {
            eta: inst.eta,
            meta_lr: inst.eta,
            gammas: inst.gammas,
            method: Method::MetaXt,
            meta_grad_mode: MetaGradMode::Exact,
            task_kind: TaskKind::SequenceClassification,
            use_rtn: false,
            clip_norm: 5.0,
            epsilon_rule: EpsilonRule::default(),
        };
        let mut counters = Instrumentation::default();
        let exact = meta_gradient(&inst.spec, &inst.params, &batch, &base, &mut counters);
        let mut fd_hyper = base.clone();
        fd_hyper.meta_grad_mode = MetaGradMode::FiniteDifference;
        let fd_mode = meta_gradient(&inst.spec, &inst.params, &batch, &fd_hyper, &mut counters);
        let oracle = proxy_meta_fd(
            &inst.spec,
            &inst.params,
            &batch,
            inst.eta,
            &inst.gammas,
            TaskKind::SequenceClassification,
            false,
            1e-4,
        );
        match (exact, fd_mode, oracle) {
            (Ok((exact, _)), Ok((fd_mode, _)), Ok(oracle)) => {
                let mut worst = 0.0f64;
                for (a, b) in exact.iter().zip(oracle.iter()) {
                    let err = math::abs(a - b) / (math::max(math::abs(*a), math::abs(*b)) + 1e-8);
                    worst = math::max(worst, err);
                }
                let diff: f64 = math::sqrt(
                    exact.iter().zip(fd_mode.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
                );
                let norm: f64 = math::sqrt(exact.iter().map(|x| x * x).sum());
                let mode_rel = diff / math::max(norm, 1e-8);
                let ok = worst <= 1e-3 && mode_rel <= 1e-2;
                let detail = format!(
                    "{} params: exact-vs-proxy-fd max rel {worst:.2e}; fd-mode rel {mode_rel:.2e}",
                    inst.total_params()
                );
                reports.push(if ok {
                    CheckReport::pass(format!("meta-grad/{i}"), detail)
                } else {
                    CheckReport::fail(format!("meta-grad/{i}"), detail)
                });
            }
            (e, f, o) => {
                reports.push(CheckReport::fail(
                    format!("meta-grad/{i}"),
                    format!("errors: {:?} {:?} {:?}", e.err(), f.err(), o.err()),
                ));
            }
        }
    }
    reports
}

/// Run the full verification suite.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let mut reports = check_primitive_gradients(seed);
    reports.extend(check_network_gradients(seed, 5));
    reports.extend(check_hvp_agreement(seed, 5));
    reports.extend(check_meta_gradient(seed, 5));
    reports
}
