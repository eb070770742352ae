//! Property-based invariants and second-order oracle checks.

use std::cell::RefCell;
use std::collections::BTreeMap;

use proptest::prelude::*;

use metaxt_core::data::{Example, TaskKind};
use metaxt_core::engine::{self, EpsilonRule, ParamLeaves};
use metaxt_core::loss::{
    l_train, l_train_nodes, ltn_input_rows, soft_ce, Gammas, Instrumentation, LtnInputs, SoftLabel,
};
use metaxt_core::model::{ltn_forward, Activation, ModelDims, ModelSpec};
use metaxt_core::params::{FlatParams, Group, GroupLayout, ParamLayout};
use metaxt_core::tape::{NodeId, Shape, Tape};
use metaxt_core::verify::{self, random_tiny_instance};
use metaxt_core::{rng, Result};

fn distribution(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

proptest! {
    /// Gibbs inequality: soft_ce(y, p) >= entropy(y), equality iff p = y.
    #[test]
    fn gibbs_inequality(
        wy in prop::collection::vec(0.01f64..1.0, 4),
        wp in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let y = SoftLabel::new(distribution(wy)).unwrap();
        let p = distribution(wp);
        let ce = soft_ce(&y, &p).unwrap();
        prop_assert!(ce >= y.entropy() - 1e-9, "ce {ce} < entropy {}", y.entropy());
        let self_ce = soft_ce(&y, y.probs()).unwrap();
        prop_assert!((self_ce - y.entropy()).abs() <= 1e-9);
    }

    /// soft_ce is affine in its first argument.
    #[test]
    fn soft_ce_affine_in_y(
        w1 in prop::collection::vec(0.01f64..1.0, 3),
        w2 in prop::collection::vec(0.01f64..1.0, 3),
        wp in prop::collection::vec(0.01f64..1.0, 3),
        lambda in 0.0f64..1.0,
    ) {
        let y1 = SoftLabel::new(distribution(w1)).unwrap();
        let y2 = SoftLabel::new(distribution(w2)).unwrap();
        let p = distribution(wp);
        let mixed: Vec<f64> = y1
            .probs()
            .iter()
            .zip(y2.probs())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let mixed = SoftLabel::new(mixed).unwrap();
        let lhs = soft_ce(&mixed, &p).unwrap();
        let rhs = lambda * soft_ce(&y1, &p).unwrap() + (1.0 - lambda) * soft_ce(&y2, &p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12, "lhs {lhs} rhs {rhs}");
    }

    /// Every label-transfer output is a distribution (1e-12 tolerance).
    #[test]
    fn ltn_outputs_are_distributions(seed in 0u64..5000, label in 0usize..2, f0 in -2.0f64..2.0, f1 in -2.0f64..2.0) {
        let spec = tiny_spec();
        let mut r = rng::from_seed(seed);
        let params = spec.init_params(&mut r);
        let x = Example::sequence(vec![f0, f1], label);
        let soft = ltn_forward(&spec, &params, &x).unwrap();
        let s: f64 = soft[0].probs().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(soft[0].probs().iter().all(|&p| p >= 0.0));
    }

    /// Flatten and unflatten round-trip bit-exactly.
    #[test]
    fn flatten_roundtrip(values in prop::collection::vec(-1e6f64..1e6, 15)) {
        let mut groups = BTreeMap::new();
        groups.insert(Group::Theta, GroupLayout::new(vec![Shape::new(2, 3)]));
        groups.insert(Group::W, GroupLayout::new(vec![Shape::new(1, 4)]));
        groups.insert(Group::Alpha, GroupLayout::new(vec![Shape::new(5, 1)]));
        let layout = ParamLayout::new(groups);
        let p = FlatParams::from_flat_vec(layout.clone(), &values).unwrap();
        let flat = p.to_flat_vec();
        prop_assert_eq!(flat.len(), values.len());
        for (a, b) in flat.iter().zip(values.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

fn tiny_spec() -> ModelSpec {
    ModelSpec::for_task(
        2,
        2,
        3,
        false,
        &ModelDims {
            hidden_dims: vec![3],
            h_dim: 3,
            z_dim: 2,
            ltn_hidden: Some(3),
            activation: Activation::Tanh,
        },
        false,
    )
    .unwrap()
}

fn batches() -> (Vec<Example>, Vec<Example>) {
    (
        vec![Example::sequence(vec![0.5, -0.2], 0), Example::sequence(vec![-1.0, 0.3], 2)],
        vec![Example::sequence(vec![0.8, 0.1], 1), Example::sequence(vec![-0.4, -0.9], 0)],
    )
}

/// Gradient of the full training loss with respect to alpha equals
/// gamma2 times the gradient of the transfer term alone. With a
/// power-of-two gamma2 the equality is exact to the bit.
#[test]
fn alpha_gradient_is_gamma2_times_transfer_gradient() {
    let spec = tiny_spec();
    let mut r = rng::from_seed(77);
    let params = spec.init_params(&mut r);
    let (bt, bs) = batches();
    let bt_refs: Vec<&Example> = bt.iter().collect();
    let bs_refs: Vec<&Example> = bs.iter().collect();

    for (gamma2, bitwise) in [(0.5f64, true), (0.7f64, false)] {
        let counters = RefCell::new(Instrumentation::default());
        let spec_ref = &spec;
        let bt2 = bt_refs.clone();
        let bs2 = bs_refs.clone();
        let full = move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
            let mut c = counters.borrow_mut();
            l_train_nodes(
                tape,
                spec_ref,
                leaves,
                &bt2,
                &bs2,
                TaskKind::SequenceClassification,
                &Gammas { gamma1: 0.9, gamma2 },
                false,
                &LtnInputs::FromEncoder,
                &mut c,
            )
            .map(|n| n.total)
        };
        let counters2 = RefCell::new(Instrumentation::default());
        let bt3 = bt_refs.clone();
        let bs3 = bs_refs.clone();
        let transfer_only = move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
            let mut c = counters2.borrow_mut();
            let nodes = l_train_nodes(
                tape,
                spec_ref,
                leaves,
                &bt3,
                &bs3,
                TaskKind::SequenceClassification,
                &Gammas { gamma1: 0.9, gamma2 },
                false,
                &LtnInputs::FromEncoder,
                &mut c,
            )?;
            Ok(nodes.transfer.expect("gamma2 > 0"))
        };
        let g_full = engine::grad(&full, &params, &[Group::Alpha]).unwrap();
        let g_transfer = engine::grad(&transfer_only, &params, &[Group::Alpha]).unwrap();
        for (a, t) in g_full[&Group::Alpha].iter().zip(g_transfer[&Group::Alpha].iter()) {
            let expect = gamma2 * t;
            if bitwise {
                assert_eq!(a.to_bits(), expect.to_bits(), "gamma2 {gamma2}: {a} vs {expect}");
            } else {
                assert!((a - expect).abs() <= 1e-15 * expect.abs().max(1.0));
            }
        }
    }
}

/// Two evaluations with identical parameters produce bit-identical losses
/// and gradients.
#[test]
fn replay_determinism_losses_and_gradients() {
    let spec = tiny_spec();
    let mut r = rng::from_seed(99);
    let params = spec.init_params(&mut r);
    let (bt, bs) = batches();
    let gammas = Gammas::default();

    let b1 = l_train(&spec, &params, &bt, &bs, TaskKind::SequenceClassification, &gammas, false)
        .unwrap();
    let b2 = l_train(&spec, &params, &bt, &bs, TaskKind::SequenceClassification, &gammas, false)
        .unwrap();
    assert_eq!(b1.total.to_bits(), b2.total.to_bits());
    assert_eq!(b1.target_term.to_bits(), b2.target_term.to_bits());
    assert_eq!(b1.transfer_term.to_bits(), b2.transfer_term.to_bits());

    let bt_refs: Vec<&Example> = bt.iter().collect();
    let bs_refs: Vec<&Example> = bs.iter().collect();
    let grad_once = || {
        let counters = RefCell::new(Instrumentation::default());
        let spec_ref = &spec;
        let bt2 = bt_refs.clone();
        let bs2 = bs_refs.clone();
        let loss = move |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
            let mut c = counters.borrow_mut();
            l_train_nodes(
                tape,
                spec_ref,
                leaves,
                &bt2,
                &bs2,
                TaskKind::SequenceClassification,
                &Gammas::default(),
                false,
                &LtnInputs::FromEncoder,
                &mut c,
            )
            .map(|n| n.total)
        };
        engine::grad(&loss, &params, &[Group::Theta, Group::Alpha]).unwrap()
    };
    let g1 = grad_once();
    let g2 = grad_once();
    for group in [Group::Theta, Group::Alpha] {
        for (a, b) in g1[&group].iter().zip(g2[&group].iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

/// A ~30-parameter two-layer net: the finite-difference mixed product
/// agrees with the exact double-backward one within 1e-3 relative.
#[test]
fn hvp_fd_matches_exact_on_small_net() {
    let inst = random_tiny_instance(3001);
    let batch = inst.batch();
    let pinned = ltn_input_rows(&inst.spec, &inst.params, &batch.source).unwrap();
    let counters = RefCell::new(Instrumentation::default());
    let spec = &inst.spec;
    let gammas = inst.gammas;
    let loss = |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
        let mut c = counters.borrow_mut();
        l_train_nodes(
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
    let mut dir_rng = rng::from_seed(5);
    let mut direction = BTreeMap::new();
    for (g, l) in inst.params.layout().groups() {
        if g != Group::Alpha {
            direction.insert(g, (0..l.len()).map(|_| rng::uniform(&mut dir_rng, -1.0, 1.0)).collect::<Vec<f64>>());
        }
    }
    let exact = engine::hvp_exact(&loss, &inst.params, &direction, Group::Alpha).unwrap();
    let fd =
        engine::hvp_fd(&loss, &inst.params, &direction, Group::Alpha, EpsilonRule::default())
            .unwrap();
    let diff: f64 = exact.iter().zip(fd.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    assert!(diff / norm <= 1e-3, "relative disagreement {}", diff / norm);
}

/// hvp_exact against its own independent oracle: coordinate-wise central
/// differences over alpha of the scalar field g(alpha) = <∇_main L, d>.
#[test]
fn hvp_exact_matches_coordinate_fd_of_inner_product() {
    let inst = random_tiny_instance(4242);
    let batch = inst.batch();
    let counters = RefCell::new(Instrumentation::default());
    let spec = &inst.spec;
    let gammas = inst.gammas;
    let loss = |tape: &mut Tape, leaves: &ParamLeaves| -> Result<NodeId> {
        let mut c = counters.borrow_mut();
        l_train_nodes(
            tape,
            spec,
            leaves,
            &batch.target_train,
            &batch.source,
            TaskKind::SequenceClassification,
            &gammas,
            false,
            &LtnInputs::FromEncoder,
            &mut c,
        )
        .map(|n| n.total)
    };
    let main_groups: Vec<Group> =
        inst.params.layout().groups().map(|(g, _)| g).filter(|&g| g != Group::Alpha).collect();
    let mut dir_rng = rng::from_seed(6);
    let mut direction = BTreeMap::new();
    for (g, l) in inst.params.layout().groups() {
        if g != Group::Alpha {
            direction.insert(g, (0..l.len()).map(|_| rng::uniform(&mut dir_rng, -1.0, 1.0)).collect::<Vec<f64>>());
        }
    }
    let exact = engine::hvp_exact(&loss, &inst.params, &direction, Group::Alpha).unwrap();

    // Oracle: s(alpha) via first-order gradients only. Theta stays fixed, so
    // the blocked representation input is automatically pinned.
    let inner_product = |p: &FlatParams| -> f64 {
        let g = engine::grad(&loss, p, &main_groups).unwrap();
        main_groups
            .iter()
            .map(|gr| {
                g[gr].iter().zip(direction[gr].iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    };
    let h = 1e-5;
    let alpha_len = inst.params.layout().group(Group::Alpha).unwrap().len();
    let mut worst = 0.0f64;
    for i in 0..alpha_len {
        let mut plus = inst.params.clone();
        plus.group_mut(Group::Alpha)[i] += h;
        let mut minus = inst.params.clone();
        minus.group_mut(Group::Alpha)[i] -= h;
        let fd = (inner_product(&plus) - inner_product(&minus)) / (2.0 * h);
        let rel = (exact[i] - fd).abs() / (exact[i].abs().max(fd.abs()) + 1e-7);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

/// The full verification suite reports all passes.
#[test]
fn verification_suite_is_green() {
    let reports = verify::run_all(20260810);
    for r in &reports {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
    assert!(reports.len() > 30);
}
