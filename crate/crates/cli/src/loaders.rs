//! File loaders for small real corpora.
//!
//! Two formats, both line-oriented and bit-exactly specified:
//!
//! - Classification CSV: UTF-8, header `label,f1,...,fD` required, one row
//!   per example with the label first.
//! - CoNLL-style tagging: `token<TAB>tag` lines, blank line between
//!   sentences, `#`-prefixed comment lines ignored. Tokens are featurized
//!   by seeded hashing of the surface string into `input_dim` buckets.
//!
//! Label vocabularies are built in first-appearance order. When an existing
//! vocabulary is supplied, an unseen label is an error, never a silent
//! remap.

use std::fs;
use std::path::Path;

use metaxt_core::data::{hash_features, Dataset, Example, LabelSpace};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:{line}: unseen label '{label}' not in the supplied vocabulary")]
    UnseenLabel { path: String, line: usize, label: String },
}

pub type LoadResult<T> = Result<T, LoadError>;

struct VocabBuilder<'a> {
    names: Vec<String>,
    frozen: Option<&'a LabelSpace>,
}

impl<'a> VocabBuilder<'a> {
    fn new(frozen: Option<&'a LabelSpace>) -> Self {
        VocabBuilder { names: Vec::new(), frozen }
    }

    fn intern(&mut self, label: &str, path: &str, line: usize) -> LoadResult<usize> {
        if let Some(space) = self.frozen {
            return space.index_of(label).ok_or_else(|| LoadError::UnseenLabel {
                path: path.to_string(),
                line,
                label: label.to_string(),
            });
        }
        if let Some(i) = self.names.iter().position(|n| n == label) {
            return Ok(i);
        }
        self.names.push(label.to_string());
        Ok(self.names.len() - 1)
    }

    fn finish(self, task: &str) -> LabelSpace {
        match self.frozen {
            Some(space) => space.clone(),
            None => LabelSpace::new(task, self.names),
        }
    }
}

/// Load a classification CSV. With `vocab`, labels must already be known.
pub fn load_csv_classification(
    path: impl AsRef<Path>,
    vocab: Option<&LabelSpace>,
) -> LoadResult<Dataset> {
    let path_str = path.as_ref().display().to_string();
    let text = fs::read_to_string(&path).map_err(|source| LoadError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());

    if text.trim().is_empty() {
        // Empty file: empty dataset with a zero-length vocabulary.
        return Ok(Dataset {
            examples: Vec::new(),
            labels: vocab.cloned().unwrap_or_else(|| LabelSpace::new(path_str, Vec::new())),
            input_dim: 0,
        });
    }
    let input_dim = {
        let headers = reader.headers().map_err(|e| LoadError::Parse {
            path: path_str.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        if headers.get(0) != Some("label") {
            return Err(LoadError::Parse {
                path: path_str,
                line: 1,
                message: "header must start with the 'label' column".to_string(),
            });
        }
        headers.len() - 1
    };

    let mut builder = VocabBuilder::new(vocab);
    let mut examples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| LoadError::Parse {
            path: path_str.clone(),
            line,
            message: e.to_string(),
        })?;
        if record.len() != input_dim + 1 {
            return Err(LoadError::Parse {
                path: path_str,
                line,
                message: format!("expected {} fields, found {}", input_dim + 1, record.len()),
            });
        }
        let label = builder.intern(&record[0], &path_str, line)?;
        let mut features = Vec::with_capacity(input_dim);
        for f in record.iter().skip(1) {
            let value: f64 = f.trim().parse().map_err(|_| LoadError::Parse {
                path: path_str.clone(),
                line,
                message: format!("'{f}' is not a number"),
            })?;
            features.push(value);
        }
        examples.push(Example::sequence(features, label));
    }
    Ok(Dataset { examples, labels: builder.finish(&path_str), input_dim })
}

/// Write a classification dataset in the same CSV format. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_csv_classification(path: impl AsRef<Path>, dataset: &Dataset) -> LoadResult<()> {
    let path_str = path.as_ref().display().to_string();
    let mut out = String::from("label");
    for i in 1..=dataset.input_dim {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for ex in &dataset.examples {
        out.push_str(&dataset.labels.names[ex.labels[0]]);
        for v in &ex.features[0] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(&path, out).map_err(|source| LoadError::Io { path: path_str, source })
}

/// Load a CoNLL-style tagging file, featurizing tokens by seeded hashing
/// into `input_dim` buckets.
pub fn load_conll_tagging(
    path: impl AsRef<Path>,
    input_dim: usize,
    hash_seed: u64,
    vocab: Option<&LabelSpace>,
) -> LoadResult<Dataset> {
    let path_str = path.as_ref().display().to_string();
    let text = fs::read_to_string(&path).map_err(|source| LoadError::Io {
        path: path_str.clone(),
        source,
    })?;

    let mut builder = VocabBuilder::new(vocab);
    let mut examples = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.trim().is_empty() {
            if !labels.is_empty() {
                examples.push(Example::tagging(
                    std::mem::take(&mut features),
                    std::mem::take(&mut labels),
                ));
            }
            continue;
        }
        let mut parts = trimmed.split('\t');
        let (token, tag) = match (parts.next(), parts.next(), parts.next()) {
            (Some(token), Some(tag), None) if !token.is_empty() && !tag.is_empty() => (token, tag),
            _ => {
                return Err(LoadError::Parse {
                    path: path_str,
                    line,
                    message: "expected 'token<TAB>tag'".to_string(),
                })
            }
        };
        features.push(hash_features(token, input_dim, hash_seed));
        labels.push(builder.intern(tag, &path_str, line)?);
    }
    if !labels.is_empty() {
        examples.push(Example::tagging(features, labels));
    }
    Ok(Dataset { examples, labels: builder.finish(&path_str), input_dim })
}
