//! Experiment orchestration: build the task pair, run every seed, select
//! the best checkpoint by validation metric, evaluate on the test split,
//! and aggregate across seeds.

use std::time::Instant;

use anyhow::{anyhow, Result};

use metaxt_core::data::{
    gen_granularity_pair, gen_tagset_pair_with_noise, sample_splits, Example, SplitSet, TaskKind,
    TaskPair,
};
use metaxt_core::metrics::{accuracy, token_f1};
use metaxt_core::model::{predict, ModelSpec};
use metaxt_core::params::FlatParams;
use metaxt_core::train::{
    ltn_map, sample_batch_triple, train_step, Method, StepRecord, TrainHyper, TrainState,
};
use metaxt_core::rng;

use crate::config::{RunConfig, TaskSource};
use crate::loaders;

/// Outcome of a single seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metric_name: &'static str,
    pub metric_value: f64,
    pub steps_to_best: u64,
    pub wall_ms: u128,
    pub curves: Vec<StepRecord>,
    pub validation_curve: Vec<(u64, f64)>,
    pub ltn_map: Option<Vec<Vec<f64>>>,
    pub best_params: FlatParams,
}

/// Aggregated outcome of one (method, k) run over all seeds.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub k: usize,
    pub metric_name: &'static str,
    pub outcomes: Vec<SeedOutcome>,
    pub failures: Vec<(u64, String)>,
    pub mean: f64,
    pub std: f64,
}

impl RunResult {
    /// A run with at least one failed seed is partial.
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Sample std with the n-1 denominator (0 for a single seed), matching how
/// multi-run figures are usually reported.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Materialize the task pair described by the config.
pub fn build_pair(config: &RunConfig) -> Result<TaskPair> {
    let pair = match &config.task {
        TaskSource::Granularity { n_source, n_target_pool, noise_sigma } => {
            gen_granularity_pair(config.data_seed, *n_source, *n_target_pool, *noise_sigma)
                .map_err(|e| anyhow!("{e}"))?
        }
        TaskSource::Tagset { n_sentences, refinement, noise } => {
            gen_tagset_pair_with_noise(config.data_seed, *n_sentences, refinement, *noise)
                .map_err(|e| anyhow!("{e}"))?
        }
        TaskSource::CsvFiles { source, target } => {
            let source = loaders::load_csv_classification(source, None)?;
            let target = loaders::load_csv_classification(target, None)?;
            if source.input_dim != target.input_dim {
                return Err(anyhow!(
                    "source and target CSVs disagree on feature width ({} vs {})",
                    source.input_dim,
                    target.input_dim
                ));
            }
            let pair = TaskPair {
                source,
                target,
                task_kind: TaskKind::SequenceClassification,
                oracle_map: None,
            };
            pair.validate().map_err(|e| anyhow!("{e}"))?;
            pair
        }
        TaskSource::ConllFiles { source, target, input_dim, hash_seed } => {
            let source = loaders::load_conll_tagging(source, *input_dim, *hash_seed, None)?;
            let target = loaders::load_conll_tagging(target, *input_dim, *hash_seed, None)?;
            let pair =
                TaskPair { source, target, task_kind: TaskKind::TokenTagging, oracle_map: None };
            pair.validate().map_err(|e| anyhow!("{e}"))?;
            pair
        }
    };
    Ok(pair)
}

/// Metric name for a task kind.
pub fn metric_name(task_kind: TaskKind) -> &'static str {
    match task_kind {
        TaskKind::SequenceClassification => "accuracy",
        TaskKind::TokenTagging => "micro_f1",
    }
}

/// Evaluate predictions of the target head over a set of examples.
pub fn evaluate(
    spec: &ModelSpec,
    params: &FlatParams,
    examples: &[Example],
    task_kind: TaskKind,
    outside: Option<usize>,
) -> Result<f64> {
    let mut predictions = Vec::with_capacity(examples.len());
    let mut gold = Vec::with_capacity(examples.len());
    for ex in examples {
        predictions.push(predict(spec, params, ex).map_err(|e| anyhow!("{e}"))?);
        gold.push(ex.labels.clone());
    }
    let value = match task_kind {
        TaskKind::SequenceClassification => accuracy(&predictions, &gold),
        TaskKind::TokenTagging => token_f1(&predictions, &gold, outside),
    };
    value.map_err(|e| anyhow!("{e}"))
}

/// Build the model spec for a pair under the config's dimension knobs.
pub fn spec_for(config: &RunConfig, pair: &TaskPair) -> Result<ModelSpec> {
    ModelSpec::for_task(
        pair.target.input_dim,
        pair.source.labels.len(),
        pair.target.labels.len(),
        pair.task_kind == TaskKind::TokenTagging,
        &config.dims,
        config.use_rtn,
    )
    .map_err(|e| anyhow!("{e}"))
}

fn hyper_for(config: &RunConfig, method: Method, task_kind: TaskKind) -> TrainHyper {
    TrainHyper {
        eta: config.eta,
        meta_lr: config.meta_lr,
        gammas: config.gammas,
        method,
        meta_grad_mode: config.meta_grad_mode,
        task_kind,
        use_rtn: config.use_rtn,
        clip_norm: config.clip_norm,
        epsilon_rule: config.epsilon_rule(),
    }
}

/// Number of source examples the label-transfer analysis averages over.
const LTN_MAP_SAMPLE: usize = 500;

/// Train one seed end to end and evaluate the best checkpoint on the test
/// split.
pub fn run_seed(
    config: &RunConfig,
    pair: &TaskPair,
    method: Method,
    k: usize,
    seed: u64,
) -> Result<SeedOutcome> {
    let start = Instant::now();
    let split: SplitSet =
        sample_splits(pair, k, seed, &config.split).map_err(|e| anyhow!("{e}"))?;
    let spec = spec_for(config, pair)?;
    let outside = match pair.task_kind {
        TaskKind::TokenTagging => pair.target.labels.outside_index(),
        TaskKind::SequenceClassification => None,
    };

    let mut master = rng::from_seed(seed);
    let mut init_rng = rng::derive(&mut master);
    let batch_seed = rng::next_seed(&mut master);
    let params = spec.init_params(&mut init_rng);
    let hyper = hyper_for(config, method, pair.task_kind);
    let mut state = TrainState::new(params, hyper, batch_seed).map_err(|e| anyhow!("{e}"))?;

    let mut curves = Vec::new();
    let mut validation_curve = Vec::new();
    let mut best_metric =
        evaluate(&spec, &state.params, &split.validation, pair.task_kind, outside)?;
    let mut best_params = state.params.clone();
    let mut steps_to_best = 0u64;
    validation_curve.push((0, best_metric));

    for step in 1..=config.step_budget {
        let batch = sample_batch_triple(&mut state.rng, &split, config.batch_size);
        let record = train_step(&spec, &mut state, &batch).map_err(|e| anyhow!("step {step}: {e}"))?;
        curves.push(record);
        if step % config.eval_every == 0 || step == config.step_budget {
            let metric =
                evaluate(&spec, &state.params, &split.validation, pair.task_kind, outside)?;
            validation_curve.push((step, metric));
            if metric > best_metric {
                best_metric = metric;
                best_params = state.params.clone();
                steps_to_best = step;
            }
        }
    }

    let metric_value = evaluate(&spec, &best_params, &split.test, pair.task_kind, outside)?;
    let ltn_map = match method {
        Method::MetaXt | Method::Xt => {
            let n = split.source_train.len().min(LTN_MAP_SAMPLE);
            let sample = &split.source_train[..n];
            match ltn_map(&spec, &best_params, sample) {
                Ok(map) => Some(map),
                // Tiny samples can miss a source label; fall back to all.
                Err(_) => Some(
                    ltn_map(&spec, &best_params, &split.source_train)
                        .map_err(|e| anyhow!("{e}"))?,
                ),
            }
        }
        _ => None,
    };

    Ok(SeedOutcome {
        seed,
        metric_name: metric_name(pair.task_kind),
        metric_value,
        steps_to_best,
        wall_ms: start.elapsed().as_millis(),
        curves,
        validation_curve,
        ltn_map,
        best_params,
    })
}

/// Run every seed of a config for one (method, k) cell.
pub fn run_cell(config: &RunConfig, pair: &TaskPair, method: Method, k: usize) -> RunResult {
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        match run_seed(config, pair, method, k, seed) {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let values: Vec<f64> = outcomes.iter().map(|o| o.metric_value).collect();
    let (mean, std) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&values) };
    RunResult {
        method,
        k,
        metric_name: metric_name(pair.task_kind),
        outcomes,
        failures,
        mean,
        std,
    }
}

/// Run a single config (its own method and k).
pub fn run(config: &RunConfig) -> Result<RunResult> {
    let pair = build_pair(config)?;
    Ok(run_cell(config, &pair, config.method, config.k))
}

/// Cross product over the config's `methods` and `ks` axes. Cells execute
/// in parallel (worker count from `METAXT_WORKERS`); results come back in
/// deterministic (method, k) order regardless of scheduling.
pub fn sweep(config: &RunConfig) -> Result<Vec<RunResult>> {
    let pair = build_pair(config)?;
    let cells: Vec<(Method, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| config.ks.iter().map(move |&k| (m, k)))
        .collect();

    let workers = std::env::var("METAXT_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n);
        }
        builder.build()?
    };
    let mut results: Vec<RunResult> = pool.install(|| {
        use rayon::prelude::*;
        cells.par_iter().map(|&(m, k)| run_cell(config, &pair, m, k)).collect()
    });
    // Single-writer aggregation in a stable order.
    results.sort_by_key(|r| (r.method.name(), r.k));
    Ok(results)
}
