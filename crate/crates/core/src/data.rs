//! Task pairs, synthetic generators, and the k-shot split protocol.
//!
//! Two synthetic regimes mirror the two label-space disparities the library
//! targets: [`gen_granularity_pair`] builds a coarse-polarity source next to
//! a five-scale target over the same 1-D latent axis, and
//! [`gen_tagset_pair`] builds token-tagging corpora where the source tag set
//! is a coarsening of the target tag set. Both record the generating
//! correspondence in `oracle_map` so analysis output can be checked against
//! ground truth.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::rng::{self, Rng};
use crate::Result;

/// Dimensionality of synthetic feature vectors (both generators).
pub const SYNTH_INPUT_DIM: usize = 16;

/// Default token-feature noise for the tag-set generator.
pub const DEFAULT_TAGSET_NOISE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    SequenceClassification,
    TokenTagging,
}

/// One labeled instance. Sequence-classification examples have exactly one
/// prediction unit; tagging examples have one unit per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Example {
    pub fn sequence(features: Vec<f64>, label: usize) -> Self {
        Example { features: vec![features], labels: vec![label] }
    }

    pub fn tagging(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        Example { features, labels }
    }

    pub fn num_units(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self, input_dim: usize, num_labels: usize) -> Result<()> {
        if self.features.len() != self.labels.len() || self.features.is_empty() {
            return Err(CoreError::invalid("example units and labels must align and be nonempty"));
        }
        for f in &self.features {
            if f.len() != input_dim {
                return Err(CoreError::invalid(format!(
                    "feature width {} does not match input_dim {input_dim}",
                    f.len()
                )));
            }
        }
        for &l in &self.labels {
            if l >= num_labels {
                return Err(CoreError::invalid(format!("label {l} out of range (<{num_labels})")));
            }
        }
        Ok(())
    }
}

/// A named label vocabulary. Source and target label spaces are always
/// distinct objects; the premise of the whole exercise is that they differ
/// as sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    pub task: String,
    pub names: Vec<String>,
}

impl LabelSpace {
    pub fn new(task: impl Into<String>, names: Vec<String>) -> Self {
        LabelSpace { task: task.into(), names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Index of the conventional "outside" tag, when present.
    pub fn outside_index(&self) -> Option<usize> {
        self.index_of("O")
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub labels: LabelSpace,
    pub input_dim: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for ex in &self.examples {
            ex.validate(self.input_dim, self.labels.len())?;
        }
        Ok(())
    }
}

/// A source/target dataset pair with disparate label spaces.
#[derive(Debug, Clone)]
pub struct TaskPair {
    pub source: Dataset,
    pub target: Dataset,
    pub task_kind: TaskKind,
    /// Ground-truth `P(y_target | y_source)` for synthetic pairs, one row
    /// per source label.
    pub oracle_map: Option<Vec<Vec<f64>>>,
}

impl TaskPair {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.labels.names == self.target.labels.names {
            return Err(CoreError::invalid("source and target label spaces must differ as sets"));
        }
        if self.source.input_dim != self.target.input_dim {
            return Err(CoreError::invalid("source and target feature widths must match"));
        }
        if let Some(map) = &self.oracle_map {
            if map.len() != self.source.labels.len() {
                return Err(CoreError::invalid("oracle_map must have one row per source label"));
            }
            for row in map {
                let s: f64 = row.iter().sum();
                if row.len() != self.target.labels.len() || math::abs(s - 1.0) > 1e-9 {
                    return Err(CoreError::invalid("oracle_map rows must be distributions"));
                }
            }
        }
        Ok(())
    }
}

/// k-shot split of a task pair.
#[derive(Debug, Clone)]
pub struct SplitSet {
    pub train_k: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub source_train: Vec<Example>,
}

/// Sequence-length caps applied when sampling splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub max_len_classification: usize,
    pub max_len_tagging: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { max_len_classification: 128, max_len_tagging: 64 }
    }
}

fn unit_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng::normal(rng)).collect();
    let norm = math::sqrt(v.iter().map(|x| x * x).sum());
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Build the label-granularity pair: five target classes as Gaussian
/// clusters at equally spaced positions along one latent axis, and a binary
/// source drawn from the outer clusters only (the middle target class never
/// appears in the source).
pub fn gen_granularity_pair(
    seed: u64,
    n_source: usize,
    n_target_pool: usize,
    noise_sigma: f64,
) -> Result<TaskPair> {
    if n_source < 1000 {
        return Err(CoreError::invalid("n_source must be at least 1000"));
    }
    if n_target_pool == 0 || noise_sigma < 0.0 {
        return Err(CoreError::invalid("n_target_pool must be positive and noise_sigma >= 0"));
    }
    let dim = SYNTH_INPUT_DIM;
    let mut master = rng::from_seed(seed);
    let axis = unit_direction(&mut master, dim);
    let mut target_rng = rng::derive(&mut master);
    let mut source_rng = rng::derive(&mut master);

    let cluster_point = |class: usize, rng: &mut Rng| -> Vec<f64> {
        let pos = class as f64 - 2.0;
        (0..dim).map(|i| pos * axis[i] + noise_sigma * rng::normal(rng)).collect()
    };

    let target_examples: Vec<Example> = (0..n_target_pool)
        .map(|_| {
            let class = rng::below(&mut target_rng, 5);
            Example::sequence(cluster_point(class, &mut target_rng), class)
        })
        .collect();

    let source_examples: Vec<Example> = (0..n_source)
        .map(|_| {
            let side = rng::below(&mut source_rng, 4);
            let (class, label) = match side {
                0 => (0, 0),
                1 => (1, 0),
                2 => (3, 1),
                _ => (4, 1),
            };
            Example::sequence(cluster_point(class, &mut source_rng), label)
        })
        .collect();

    let oracle_map = vec![vec![0.5, 0.5, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.5, 0.5]];

    let pair = TaskPair {
        source: Dataset {
            examples: source_examples,
            labels: LabelSpace::new(
                "sentiment_polarity",
                vec!["negative".to_string(), "positive".to_string()],
            ),
            input_dim: dim,
        },
        target: Dataset {
            examples: target_examples,
            labels: LabelSpace::new("sentiment_5star", (1..=5).map(|i| i.to_string()).collect()),
            input_dim: dim,
        },
        task_kind: TaskKind::SequenceClassification,
        oracle_map: Some(oracle_map),
    };
    pair.validate()?;
    Ok(pair)
}

/// Validate that `refinement` partitions the fine tag set: every fine tag in
/// exactly one group, every group nonempty.
fn validate_refinement(refinement: &[Vec<usize>]) -> Result<usize> {
    if refinement.is_empty() {
        return Err(CoreError::invalid("refinement must have at least one source tag"));
    }
    let n_fine = refinement.iter().flatten().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut seen = vec![false; n_fine];
    for group in refinement {
        if group.is_empty() {
            return Err(CoreError::invalid("each source tag must map to at least one target tag"));
        }
        for &fine in group {
            if seen[fine] {
                return Err(CoreError::invalid(format!("target tag {fine} appears in two groups")));
            }
            seen[fine] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(CoreError::invalid("refinement is not surjective onto the target tag set"));
    }
    Ok(n_fine)
}

/// Build the tag-set pair with the default token noise.
pub fn gen_tagset_pair(seed: u64, n_sentences: usize, refinement: &[Vec<usize>]) -> Result<TaskPair> {
    gen_tagset_pair_with_noise(seed, n_sentences, refinement, DEFAULT_TAGSET_NOISE)
}

/// Token sequences with per-token features drawn from fine-tag-conditioned
/// Gaussians; source tags are the coarsening of the fine tags through
/// `refinement`. Fine tag 0 is named "O" (and so is the coarse group that
/// contains it) so tagging metrics have a conventional outside class.
pub fn gen_tagset_pair_with_noise(
    seed: u64,
    n_sentences: usize,
    refinement: &[Vec<usize>],
    noise: f64,
) -> Result<TaskPair> {
    let n_fine = validate_refinement(refinement)?;
    if n_sentences < 2 {
        return Err(CoreError::invalid("need at least two sentences"));
    }
    let n_coarse = refinement.len();
    let mut fine_to_coarse = vec![0usize; n_fine];
    for (coarse, group) in refinement.iter().enumerate() {
        for &fine in group {
            fine_to_coarse[fine] = coarse;
        }
    }

    let dim = SYNTH_INPUT_DIM;
    let mut master = rng::from_seed(seed);
    let mut center_rng = rng::derive(&mut master);
    // Hierarchical cluster geometry: each coarse tag owns a well-separated
    // center, and its fine tags sit on a small offset around it. Group
    // membership is then learnable from the plentiful coarse data while the
    // within-group split needs fine labels.
    let coarse_centers: Vec<Vec<f64>> = (0..n_coarse)
        .map(|_| unit_direction(&mut center_rng, dim).iter().map(|x| 2.0 * x).collect())
        .collect();
    let centers: Vec<Vec<f64>> = (0..n_fine)
        .map(|t| {
            let offset = unit_direction(&mut center_rng, dim);
            coarse_centers[fine_to_coarse[t]]
                .iter()
                .zip(offset.iter())
                .map(|(c, o)| c + 0.8 * o)
                .collect()
        })
        .collect();
    let mut data_rng = rng::derive(&mut master);

    let mut fine_sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = 4 + rng::below(&mut data_rng, 7); // 4..=10 tokens
        let mut feats = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            let tag = rng::below(&mut data_rng, n_fine);
            let f: Vec<f64> =
                (0..dim).map(|i| centers[tag][i] + noise * rng::normal(&mut data_rng)).collect();
            feats.push(f);
            tags.push(tag);
        }
        fine_sentences.push(Example::tagging(feats, tags));
    }

    let coarse_sentences: Vec<Example> = fine_sentences
        .iter()
        .map(|ex| {
            Example::tagging(
                ex.features.clone(),
                ex.labels.iter().map(|&t| fine_to_coarse[t]).collect(),
            )
        })
        .collect();

    // Normalized refinement: uniform over each group, since fine tags are
    // drawn uniformly.
    let oracle_map: Vec<Vec<f64>> = refinement
        .iter()
        .map(|group| {
            let mut row = vec![0.0; n_fine];
            for &fine in group {
                row[fine] = 1.0 / group.len() as f64;
            }
            row
        })
        .collect();

    let fine_names: Vec<String> = (0..n_fine)
        .map(|t| if t == 0 { "O".to_string() } else { format!("T{t}") })
        .collect();
    let coarse_names: Vec<String> = (0..n_coarse)
        .map(|c| if c == fine_to_coarse[0] { "O".to_string() } else { format!("C{c}") })
        .collect();

    let pair = TaskPair {
        source: Dataset {
            examples: coarse_sentences,
            labels: LabelSpace::new("coarse_tags", coarse_names),
            input_dim: dim,
        },
        target: Dataset {
            examples: fine_sentences,
            labels: LabelSpace::new("fine_tags", fine_names),
            input_dim: dim,
        },
        task_kind: TaskKind::TokenTagging,
        oracle_map: Some(oracle_map),
    };
    pair.validate()?;
    Ok(pair)
}

fn truncate(ex: &Example, max_len: usize) -> Example {
    if ex.num_units() <= max_len {
        ex.clone()
    } else {
        Example {
            features: ex.features[..max_len].to_vec(),
            labels: ex.labels[..max_len].to_vec(),
        }
    }
}

/// Deterministic k-shot sampling: class-balanced `train_k` and validation
/// for sequence tasks (validation sized equal to k), full-tag coverage in
/// `train_k` for tagging tasks; everything else becomes the test set.
pub fn sample_splits(pair: &TaskPair, k: usize, seed: u64, cfg: &SplitConfig) -> Result<SplitSet> {
    let max_len = match pair.task_kind {
        TaskKind::SequenceClassification => cfg.max_len_classification,
        TaskKind::TokenTagging => cfg.max_len_tagging,
    };
    let mut rng = rng::from_seed(seed);
    let pool = &pair.target.examples;
    let n_classes = pair.target.labels.len();

    let (train_idx, val_idx) = match pair.task_kind {
        TaskKind::SequenceClassification => {
            if k < n_classes {
                return Err(CoreError::invalid(format!(
                    "k = {k} is below the number of target classes {n_classes}; balanced sampling needs at least one per class"
                )));
            }
            // Per-class quota; the remainder goes to the lowest class indices.
            let quota =
                |total: usize, class: usize| total / n_classes + usize::from(class < total % n_classes);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, ex) in pool.iter().enumerate() {
                by_class[ex.labels[0]].push(i);
            }
            let mut train = Vec::with_capacity(k);
            let mut val = Vec::with_capacity(k);
            for (class, members) in by_class.iter_mut().enumerate() {
                let need = 2 * quota(k, class);
                if members.len() < need {
                    return Err(CoreError::invalid(format!(
                        "target pool has only {} examples of class {class}, need {need} for train+validation",
                        members.len()
                    )));
                }
                rng::shuffle(&mut rng, members);
                train.extend_from_slice(&members[..quota(k, class)]);
                val.extend_from_slice(&members[quota(k, class)..need]);
            }
            (train, val)
        }
        TaskKind::TokenTagging => {
            if k == 0 || 2 * k > pool.len() {
                return Err(CoreError::invalid(format!(
                    "need 2k = {} sentences for train+validation, pool has {}",
                    2 * k,
                    pool.len()
                )));
            }
            let mut pool_tags = vec![false; n_classes];
            for ex in pool {
                for &t in &ex.labels {
                    pool_tags[t] = true;
                }
            }
            if let Some(missing) = pool_tags.iter().position(|p| !p) {
                return Err(CoreError::invalid(format!(
                    "target pool lacks tag {missing} ({})",
                    pair.target.labels.names[missing]
                )));
            }
            let mut order: Vec<usize> = (0..pool.len()).collect();
            rng::shuffle(&mut rng, &mut order);
            // Greedy pass: take sentences that cover still-missing tags
            // (after truncation), then fill the budget in shuffled order.
            let mut covered = vec![false; n_classes];
            let mut taken = vec![false; pool.len()];
            let mut train = Vec::with_capacity(k);
            for &i in &order {
                if train.len() == k {
                    break;
                }
                let tags = &pool[i].labels[..pool[i].num_units().min(max_len)];
                if tags.iter().any(|&t| !covered[t]) {
                    for &t in tags {
                        covered[t] = true;
                    }
                    taken[i] = true;
                    train.push(i);
                }
            }
            if covered.iter().any(|c| !c) {
                return Err(CoreError::invalid(format!(
                    "cannot cover all {n_classes} tags within k = {k} sentences"
                )));
            }
            for &i in &order {
                if train.len() == k {
                    break;
                }
                if !taken[i] {
                    taken[i] = true;
                    train.push(i);
                }
            }
            let val: Vec<usize> = order.iter().copied().filter(|&i| !taken[i]).take(k).collect();
            (train, val)
        }
    };

    let mut in_train_or_val = vec![false; pool.len()];
    for &i in train_idx.iter().chain(val_idx.iter()) {
        in_train_or_val[i] = true;
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| truncate(&pool[i], max_len)).collect::<Vec<_>>();
    let test: Vec<Example> = pool
        .iter()
        .enumerate()
        .filter(|(i, _)| !in_train_or_val[*i])
        .map(|(_, ex)| truncate(ex, max_len))
        .collect();

    Ok(SplitSet {
        train_k: take(&train_idx),
        validation: take(&val_idx),
        test,
        source_train: pair.source.examples.iter().map(|ex| truncate(ex, max_len)).collect(),
    })
}

/// Seeded feature hashing of a surface string into `dim` signed buckets,
/// l2-normalized. Features are the whole token plus its character trigrams.
pub fn hash_features(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
        let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
    let mut v = vec![0.0; dim];
    let mut add = |bytes: &[u8]| {
        let h = fnv1a(seed, bytes);
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    let bytes = token.as_bytes();
    add(bytes);
    if bytes.len() >= 3 {
        for w in bytes.windows(3) {
            add(w);
        }
    }
    let norm = math::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn granularity_rejects_small_source() {
        assert!(gen_granularity_pair(1, 10, 100, 0.1).is_err());
    }

    #[test]
    fn granularity_source_lacks_class3_and_pool_has_it() {
        let pair = gen_granularity_pair(11, 2000, 3000, 0.3).unwrap();
        assert_eq!(pair.source.labels.len(), 2);
        // Middle class frequency in the target pool is ~1/5 (binomial CI).
        let n = pair.target.examples.len() as f64;
        let count3 = pair.target.examples.iter().filter(|e| e.labels[0] == 2).count() as f64;
        let freq = count3 / n;
        let ci = 4.0 * math::sqrt(0.2 * 0.8 / n);
        assert!((freq - 0.2).abs() <= ci, "class-3 freq {freq} outside CI {ci}");
    }

    #[test]
    fn granularity_oracle_rows_are_distributions() {
        let pair = gen_granularity_pair(3, 1000, 500, 0.0).unwrap();
        for row in pair.oracle_map.as_ref().unwrap() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn granularity_zero_noise_is_threshold_separable() {
        let pair = gen_granularity_pair(5, 1000, 200, 0.0).unwrap();
        // With zero noise x = pos * axis, so the sign of the projection onto
        // the axis recovers the polarity exactly. Recover the axis from any
        // class-4 point (position +2).
        let ref_point = pair
            .target
            .examples
            .iter()
            .find(|e| e.labels[0] == 4)
            .expect("pool contains class 5");
        let axis: Vec<f64> = ref_point.features[0].iter().map(|x| x / 2.0).collect();
        for ex in &pair.source.examples {
            let proj: f64 = ex.features[0].iter().zip(axis.iter()).map(|(a, b)| a * b).sum();
            let predicted = usize::from(proj > 0.0);
            assert_eq!(predicted, ex.labels[0]);
        }
    }

    #[test]
    fn granularity_regeneration_is_bit_identical() {
        let a = gen_granularity_pair(9, 1000, 300, 0.25).unwrap();
        let b = gen_granularity_pair(9, 1000, 300, 0.25).unwrap();
        for (x, y) in a.target.examples.iter().zip(b.target.examples.iter()) {
            assert_eq!(x.labels, y.labels);
            for (fx, fy) in x.features[0].iter().zip(y.features[0].iter()) {
                assert_eq!(fx.to_bits(), fy.to_bits());
            }
        }
    }

    #[test]
    fn tagset_identity_refinement_matches_labels() {
        let refinement = vec![vec![0], vec![1], vec![2]];
        let pair = gen_tagset_pair(21, 50, &refinement).unwrap();
        for (s, t) in pair.source.examples.iter().zip(pair.target.examples.iter()) {
            assert_eq!(s.labels, t.labels);
        }
        // Degenerate pair still has disparate label *names*.
        assert_ne!(pair.source.labels.names, pair.target.labels.names);
    }

    #[test]
    fn tagset_coarsening_roundtrip() {
        let refinement = vec![vec![0], vec![1, 2, 3], vec![4, 5, 6]];
        let pair = gen_tagset_pair(22, 80, &refinement).unwrap();
        let mut fine_to_coarse = vec![0usize; 7];
        for (c, group) in refinement.iter().enumerate() {
            for &f in group {
                fine_to_coarse[f] = c;
            }
        }
        for (s, t) in pair.source.examples.iter().zip(pair.target.examples.iter()) {
            let coarsened: Vec<usize> = t.labels.iter().map(|&f| fine_to_coarse[f]).collect();
            assert_eq!(coarsened, s.labels);
        }
    }

    #[test]
    fn tagset_empirical_conditional_matches_oracle() {
        let refinement = vec![vec![0], vec![1, 2, 3], vec![4, 5, 6]];
        let pair = gen_tagset_pair(23, 600, &refinement).unwrap();
        let oracle = pair.oracle_map.as_ref().unwrap();
        let n_fine = pair.target.labels.len();
        let mut counts = vec![vec![0usize; n_fine]; refinement.len()];
        for (s, t) in pair.source.examples.iter().zip(pair.target.examples.iter()) {
            for (&c, &f) in s.labels.iter().zip(t.labels.iter()) {
                counts[c][f] += 1;
            }
        }
        for (c, row) in counts.iter().enumerate() {
            let total: usize = row.iter().sum();
            let tv: f64 = row
                .iter()
                .enumerate()
                .map(|(f, &n)| math::abs(n as f64 / total as f64 - oracle[c][f]))
                .sum::<f64>()
                / 2.0;
            assert!(tv <= 0.05, "TV distance {tv} for coarse tag {c}");
        }
    }

    #[test]
    fn tagset_rejects_non_surjective_refinement() {
        // Fine tag 2 is missing.
        let refinement = vec![vec![0], vec![1, 3]];
        assert!(gen_tagset_pair(1, 10, &refinement).is_err());
    }

    #[test]
    fn splits_balanced_and_disjoint() {
        let pair = gen_granularity_pair(31, 1000, 600, 0.4).unwrap();
        let split = sample_splits(&pair, 20, 7, &SplitConfig::default()).unwrap();
        assert_eq!(split.train_k.len(), 20);
        assert_eq!(split.validation.len(), 20);
        assert_eq!(split.test.len(), 600 - 40);
        for class in 0..5 {
            let n = split.train_k.iter().filter(|e| e.labels[0] == class).count();
            assert_eq!(n, 4, "k=20 with 5 classes must give exactly 4 per class");
        }
    }

    #[test]
    fn splits_remainder_goes_to_lowest_classes() {
        let pair = gen_granularity_pair(32, 1000, 800, 0.4).unwrap();
        let split = sample_splits(&pair, 22, 7, &SplitConfig::default()).unwrap();
        let counts: Vec<usize> =
            (0..5).map(|c| split.train_k.iter().filter(|e| e.labels[0] == c).count()).collect();
        assert_eq!(counts, vec![5, 5, 4, 4, 4]);
    }

    #[test]
    fn splits_deterministic() {
        let pair = gen_granularity_pair(33, 1000, 500, 0.4).unwrap();
        let a = sample_splits(&pair, 20, 9, &SplitConfig::default()).unwrap();
        let b = sample_splits(&pair, 20, 9, &SplitConfig::default()).unwrap();
        assert_eq!(a.train_k, b.train_k);
        assert_eq!(a.validation, b.validation);
    }

    #[test]
    fn splits_rejects_k_below_classes() {
        let pair = gen_granularity_pair(34, 1000, 500, 0.4).unwrap();
        assert!(sample_splits(&pair, 4, 1, &SplitConfig::default()).is_err());
    }

    #[test]
    fn splits_overlap_below_hypergeometric_bound() {
        // Pairwise train_k overlap across seeds stays within sampling
        // expectation: per class, |A ∩ B| is hypergeometric with mean
        // m^2/P; bound at mean + 4 sigma summed over classes.
        let pair = gen_granularity_pair(35, 1000, 1000, 0.4).unwrap();
        let k = 25;
        let splits: Vec<_> = (0..3)
            .map(|s| sample_splits(&pair, k, 100 + s, &SplitConfig::default()).unwrap())
            .collect();
        let per_class_pool: Vec<usize> = (0..5)
            .map(|c| pair.target.examples.iter().filter(|e| e.labels[0] == c).count())
            .collect();
        let m = (k / 5) as f64;
        let (mut mean, mut var) = (0.0, 0.0);
        for &p in &per_class_pool {
            let p = p as f64;
            mean += m * m / p;
            var += m * (m / p) * (1.0 - m / p) * ((p - m) / (p - 1.0));
        }
        let bound = mean + 4.0 * math::sqrt(var);
        for i in 0..splits.len() {
            for j in (i + 1)..splits.len() {
                let overlap = splits[i]
                    .train_k
                    .iter()
                    .filter(|a| splits[j].train_k.iter().any(|b| a == &b))
                    .count() as f64;
                assert!(overlap <= bound, "overlap {overlap} above bound {bound}");
            }
        }
    }

    #[test]
    fn tagging_splits_cover_all_tags_and_truncate() {
        let refinement = vec![vec![0], vec![1, 2], vec![3, 4]];
        let pair = gen_tagset_pair(41, 300, &refinement).unwrap();
        let cfg = SplitConfig { max_len_tagging: 6, ..Default::default() };
        let split = sample_splits(&pair, 20, 3, &cfg).unwrap();
        assert_eq!(split.train_k.len(), 20);
        let mut seen = vec![false; 5];
        for ex in &split.train_k {
            assert!(ex.num_units() <= 6);
            for &t in &ex.labels {
                seen[t] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "train_k must cover every target tag");
    }

    #[test]
    fn splits_no_example_in_two_roles() {
        let pair = gen_granularity_pair(36, 1000, 400, 0.5).unwrap();
        let split = sample_splits(&pair, 20, 11, &SplitConfig::default()).unwrap();
        let all = split.train_k.len() + split.validation.len() + split.test.len();
        assert_eq!(all, 400);
        for tr in &split.train_k {
            assert!(!split.validation.contains(tr));
            assert!(!split.test.contains(tr));
        }
        for va in &split.validation {
            assert!(!split.test.contains(va));
        }
    }

    #[test]
    fn hash_features_normalized_and_seed_sensitive() {
        let a = hash_features("running", 16, 1);
        let b = hash_features("running", 16, 1);
        let c = hash_features("running", 16, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let norm: f64 = a.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
