//! Run configuration: a `key = value` text file, any key overridable from
//! the command line as `--key=value`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use metaxt_core::data::SplitConfig;
use metaxt_core::engine::EpsilonRule;
use metaxt_core::loss::Gammas;
use metaxt_core::model::{Activation, ModelDims};
use metaxt_core::train::{Method, MetaGradMode};

/// Which task pair the run uses.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    /// Synthetic polarity -> five-scale pair.
    Granularity { n_source: usize, n_target_pool: usize, noise_sigma: f64 },
    /// Synthetic coarse -> fine tagging pair.
    Tagset { n_sentences: usize, refinement: Vec<Vec<usize>>, noise: f64 },
    /// Classification CSVs.
    CsvFiles { source: PathBuf, target: PathBuf },
    /// CoNLL-style tagging files.
    ConllFiles { source: PathBuf, target: PathBuf, input_dim: usize, hash_seed: u64 },
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskSource,
    pub method: Method,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub eta: f64,
    pub meta_lr: f64,
    pub gammas: Gammas,
    pub meta_grad_mode: MetaGradMode,
    pub step_budget: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub dims: ModelDims,
    pub split: SplitConfig,
    pub use_rtn: bool,
    pub epsilon_scale: f64,
    /// Sweep axes (`sweep` subcommand only).
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
}

impl RunConfig {
    pub fn epsilon_rule(&self) -> EpsilonRule {
        EpsilonRule::ScaledByDirection { c: self.epsilon_scale }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must be nonempty");
        }
        if self.eta <= 0.0 || self.meta_lr <= 0.0 {
            bail!("learning rates must be positive");
        }
        if self.batch_size < 2 {
            bail!("batch_size must be at least 2 (the target batch is split in half)");
        }
        match &self.task {
            TaskSource::CsvFiles { source, target } => {
                for p in [source, target] {
                    if !p.exists() {
                        bail!("referenced file does not exist: {}", p.display());
                    }
                }
            }
            TaskSource::ConllFiles { source, target, .. } => {
                for p in [source, target] {
                    if !p.exists() {
                        bail!("referenced file does not exist: {}", p.display());
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
pub fn parse_kv_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected 'key = value', got '{raw}'", i + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Apply `--key=value` (or `key=value`) overrides on top of file values.
pub fn apply_overrides(
    map: &mut BTreeMap<String, String>,
    overrides: &[String],
) -> Result<()> {
    for item in overrides {
        let stripped = item.trim_start_matches('-');
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{item}' must look like --key=value"))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(())
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| anyhow!("key '{key}': cannot parse '{raw}'")),
    }
}

fn get_list<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: Vec<T>,
) -> Result<Vec<T>> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| anyhow!("key '{key}': cannot parse '{s}'")))
            .collect(),
    }
}

/// Refinement syntax: groups of fine tags separated by `|`, tags by `,`.
/// Example: `0|1,2|3,4` maps three coarse tags onto five fine tags.
fn parse_refinement(raw: &str) -> Result<Vec<Vec<usize>>> {
    raw.split('|')
        .map(|group| {
            group
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| anyhow!("bad refinement entry '{t}'")))
                .collect()
        })
        .collect()
}

/// Build a [`RunConfig`] from parsed keys. Unknown keys are rejected so
/// typos fail loudly.
pub fn build_config(map: &BTreeMap<String, String>) -> Result<RunConfig> {
    const KNOWN: &[&str] = &[
        "task", "method", "k", "seeds", "data_seed", "eta", "meta_lr", "gamma1", "gamma2",
        "meta_grad", "steps", "eval_every", "batch_size", "clip_norm", "hidden_dims", "h_dim",
        "z_dim", "ltn_hidden", "activation", "use_rtn", "epsilon_scale", "max_len_classification",
        "max_len_tagging", "n_source", "n_target_pool", "noise_sigma", "n_sentences", "refinement",
        "tagset_noise", "source_csv", "target_csv", "source_conll", "target_conll", "input_dim",
        "hash_seed", "methods", "ks",
    ];
    for key in map.keys() {
        if !KNOWN.contains(&key.as_str()) {
            bail!("unknown config key '{key}'");
        }
    }

    let task_name = map.get("task").map(String::as_str).unwrap_or("granularity");
    let task = match task_name {
        "granularity" => TaskSource::Granularity {
            n_source: get_parsed(map, "n_source", 2000)?,
            n_target_pool: get_parsed(map, "n_target_pool", 3000)?,
            noise_sigma: get_parsed(map, "noise_sigma", 0.9)?,
        },
        "tagset" => TaskSource::Tagset {
            n_sentences: get_parsed(map, "n_sentences", 1500)?,
            refinement: match map.get("refinement") {
                Some(raw) => parse_refinement(raw)?,
                None => vec![vec![0], vec![1, 2], vec![3, 4]],
            },
            noise: get_parsed(map, "tagset_noise", metaxt_core::data::DEFAULT_TAGSET_NOISE)?,
        },
        "files" | "csv" => TaskSource::CsvFiles {
            source: PathBuf::from(
                map.get("source_csv").ok_or_else(|| anyhow!("task=files needs source_csv"))?,
            ),
            target: PathBuf::from(
                map.get("target_csv").ok_or_else(|| anyhow!("task=files needs target_csv"))?,
            ),
        },
        "conll" | "files_tagging" => TaskSource::ConllFiles {
            source: PathBuf::from(
                map.get("source_conll").ok_or_else(|| anyhow!("task=conll needs source_conll"))?,
            ),
            target: PathBuf::from(
                map.get("target_conll").ok_or_else(|| anyhow!("task=conll needs target_conll"))?,
            ),
            input_dim: get_parsed(map, "input_dim", 16)?,
            hash_seed: get_parsed(map, "hash_seed", 1)?,
        },
        other => bail!("unknown task '{other}' (granularity | tagset | files | conll)"),
    };

    let method_name = map.get("method").map(String::as_str).unwrap_or("metaxt");
    let method =
        Method::from_name(method_name).ok_or_else(|| anyhow!("unknown method '{method_name}'"))?;
    let meta_grad_name = map.get("meta_grad").map(String::as_str).unwrap_or("exact");
    let meta_grad_mode = MetaGradMode::from_name(meta_grad_name)
        .ok_or_else(|| anyhow!("unknown meta_grad mode '{meta_grad_name}' (exact | fd)"))?;
    let activation = match map.get("activation").map(String::as_str).unwrap_or("tanh") {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => bail!("unknown activation '{other}'"),
    };

    let k = get_parsed(map, "k", 20)?;
    let methods = match map.get("methods") {
        None => vec![method],
        Some(raw) => raw
            .split(',')
            .map(|s| {
                Method::from_name(s.trim()).ok_or_else(|| anyhow!("unknown method '{s}'"))
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let config = RunConfig {
        task,
        method,
        k,
        seeds: get_list(map, "seeds", vec![1, 2, 3, 4, 5])?,
        data_seed: get_parsed(map, "data_seed", 7)?,
        eta: get_parsed(map, "eta", 0.1)?,
        meta_lr: get_parsed(map, "meta_lr", 0.1)?,
        gammas: Gammas::new(get_parsed(map, "gamma1", 1.0)?, get_parsed(map, "gamma2", 1.0)?)
            .map_err(|e| anyhow!("{e}"))?,
        meta_grad_mode,
        step_budget: get_parsed(map, "steps", 2000)?,
        eval_every: get_parsed(map, "eval_every", 50)?,
        batch_size: get_parsed(map, "batch_size", 10)?,
        clip_norm: get_parsed(map, "clip_norm", 5.0)?,
        dims: ModelDims {
            hidden_dims: get_list(map, "hidden_dims", vec![64, 32])?,
            h_dim: get_parsed(map, "h_dim", 32)?,
            z_dim: get_parsed(map, "z_dim", 8)?,
            ltn_hidden: map
                .get("ltn_hidden")
                .map(|raw| raw.parse().map_err(|_| anyhow!("bad ltn_hidden '{raw}'")))
                .transpose()?,
            activation,
        },
        split: SplitConfig {
            max_len_classification: get_parsed(map, "max_len_classification", 128)?,
            max_len_tagging: get_parsed(map, "max_len_tagging", 64)?,
        },
        use_rtn: get_parsed(map, "use_rtn", false)?,
        epsilon_scale: get_parsed(map, "epsilon_scale", 0.01)?,
        methods,
        ks: get_list(map, "ks", vec![k])?,
    };
    config.validate()?;
    Ok(config)
}

/// Load a config file and apply command-line overrides.
pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.as_ref().display()))?;
    let mut map = parse_kv_text(&text)?;
    apply_overrides(&mut map, overrides)?;
    build_config(&map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_from_empty_config() {
        let map = parse_kv_text("").unwrap();
        let cfg = build_config(&map).unwrap();
        assert_eq!(cfg.k, 20);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.method, Method::MetaXt);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "k = 50   # fifty shots\nmethod = xt\n# full line comment\neta = 0.2\n";
        let mut map = parse_kv_text(text).unwrap();
        apply_overrides(&mut map, &["--k=100".into(), "gamma2=0.5".into()]).unwrap();
        let cfg = build_config(&map).unwrap();
        assert_eq!(cfg.k, 100);
        assert_eq!(cfg.method, Method::Xt);
        assert_eq!(cfg.eta, 0.2);
        assert_eq!(cfg.gammas.gamma2, 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let map = parse_kv_text("etaa = 0.1\n").unwrap();
        assert!(build_config(&map).is_err());
    }

    #[test]
    fn refinement_syntax() {
        assert_eq!(
            parse_refinement("0|1,2|3,4").unwrap(),
            vec![vec![0], vec![1, 2], vec![3, 4]]
        );
    }

    #[test]
    fn missing_files_fail_validation() {
        let map =
            parse_kv_text("task = files\nsource_csv = /nonexistent/a.csv\ntarget_csv = /nonexistent/b.csv\n")
                .unwrap();
        assert!(build_config(&map).is_err());
    }

    #[test]
    fn empty_seeds_rejected() {
        let mut map = parse_kv_text("").unwrap();
        map.insert("seeds".into(), "".into());
        assert!(build_config(&map).is_err());
    }
}
