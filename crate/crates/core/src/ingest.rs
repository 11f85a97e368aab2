//! Loading a real tabular dataset: block mapping, one-hot encoding and a seeded
//! train/test split.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::DataConfig;
use crate::mann::{Block, BlockSpec, MannError};
use crate::matrix::Matrix;
use crate::stats::Task;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("column `{0}` is not in the CSV header")]
    MissingColumn(String),
    #[error("column `{0}` is not assigned to any block")]
    UnmappedColumn(String),
    #[error("column `{0}` is assigned more than once")]
    DuplicateColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    ParseError { row: usize, column: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Blocks(#[from] MannError),
}

/// How one source column became model features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedColumn {
    pub column: String,
    /// Category levels for one-hot columns, in feature order; empty for numeric columns.
    pub levels: Vec<String>,
    pub features: std::ops::Range<usize>,
}

#[derive(Debug, Clone)]
pub struct IngestedDataset {
    pub train_x: Matrix,
    pub train_y: Vec<f64>,
    pub test_x: Matrix,
    pub test_y: Vec<f64>,
    pub block_spec: BlockSpec,
    pub feature_names: Vec<String>,
    pub encoding: Vec<EncodedColumn>,
    pub task: Task,
    /// Original row index (0-based, excluding the header) of each train/test row.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Reads `config.csv`, checks that every non-target column belongs to exactly one
/// block, and splits rows with a permutation drawn from `seed`.
///
/// Category levels come from the training split only. A test row whose level was
/// not seen in training gets all-zero indicators and a logged warning.
pub fn ingest(config: &DataConfig, seed: u64) -> Result<IngestedDataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&config.csv)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    ingest_records(&header, &records, config, seed)
}

fn ingest_records(
    header: &[String],
    records: &[csv::StringRecord],
    config: &DataConfig,
    seed: u64,
) -> Result<IngestedDataset, IngestError> {
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| IngestError::MissingColumn(name.to_string()));

    let target_col = col(&config.target)?;
    let mut seen = HashSet::new();
    for block in &config.blocks {
        for c in &block.columns {
            col(c)?;
            if c == &config.target || !seen.insert(c.as_str()) {
                return Err(IngestError::DuplicateColumn(c.clone()));
            }
        }
    }
    for c in &config.ignore {
        col(c)?;
        if seen.contains(c.as_str()) {
            return Err(IngestError::DuplicateColumn(c.clone()));
        }
    }
    for h in header {
        if h != &config.target && !seen.contains(h.as_str()) && !config.ignore.contains(h) {
            return Err(IngestError::UnmappedColumn(h.clone()));
        }
    }
    for c in &config.categorical {
        if !seen.contains(c.as_str()) {
            return Err(IngestError::MissingColumn(c.clone()));
        }
    }
    if records.len() < 4 {
        return Err(IngestError::Invalid(format!("need at least 4 rows, got {}", records.len())));
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((records.len() as f64) * config.train_fraction).round() as usize;
    let n_train = n_train.clamp(2, records.len() - 2);
    let (train_rows, test_rows) = order.split_at(n_train);
    let (mut train_rows, mut test_rows) = (train_rows.to_vec(), test_rows.to_vec());
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    let categorical: HashSet<&str> = config.categorical.iter().map(String::as_str).collect();
    let mut encoding = Vec::new();
    let mut feature_names = Vec::new();
    let mut blocks = Vec::new();
    for block in &config.blocks {
        let start = feature_names.len();
        for c in &block.columns {
            let ci = index[c.as_str()];
            let first = feature_names.len();
            let levels: Vec<String> = if categorical.contains(c.as_str()) {
                let set: BTreeSet<&str> = train_rows.iter().map(|&r| &records[r][ci]).collect();
                let levels: Vec<String> = set.into_iter().map(str::to_string).collect();
                feature_names.extend(levels.iter().map(|l| format!("{c}={l}")));
                levels
            } else {
                feature_names.push(c.clone());
                Vec::new()
            };
            encoding.push(EncodedColumn { column: c.clone(), levels, features: first..feature_names.len() });
        }
        blocks.push(Block { name: block.name.clone(), features: (start..feature_names.len()).collect() });
    }
    let block_spec = BlockSpec::new(blocks)?;

    let encode = |rows: &[usize]| -> Result<Matrix, IngestError> {
        let mut m = Matrix::zeros(rows.len(), feature_names.len());
        for (i, &r) in rows.iter().enumerate() {
            for enc in &encoding {
                let ci = index[enc.column.as_str()];
                let value = &records[r][ci];
                if enc.levels.is_empty() {
                    m.set(i, enc.features.start, parse_number(value, r, &enc.column)?);
                } else if let Some(k) = enc.levels.iter().position(|l| l == value) {
                    m.set(i, enc.features.start + k, 1.0);
                } else {
                    log::warn!("row {}: level `{value}` of `{}` unseen in training, encoded as zeros", r + 1, enc.column);
                }
            }
        }
        Ok(m)
    };
    let target = |rows: &[usize]| -> Result<Vec<f64>, IngestError> {
        rows.iter()
            .map(|&r| parse_target(&records[r][target_col], r, config))
            .collect()
    };

    Ok(IngestedDataset {
        train_x: encode(&train_rows)?,
        train_y: target(&train_rows)?,
        test_x: encode(&test_rows)?,
        test_y: target(&test_rows)?,
        block_spec,
        feature_names,
        encoding,
        task: config.task,
        train_rows,
        test_rows,
    })
}

fn parse_number(value: &str, row: usize, column: &str) -> Result<f64, IngestError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::ParseError { row: row + 1, column: column.to_string(), value: value.to_string() })
}

fn parse_target(value: &str, row: usize, config: &DataConfig) -> Result<f64, IngestError> {
    match (config.task, &config.positive_label) {
        (Task::BinaryClassification, Some(positive)) => Ok(if value == positive { 1.0 } else { 0.0 }),
        (Task::BinaryClassification, None) => {
            let v = parse_number(value, row, &config.target)?;
            if v == 0.0 || v == 1.0 {
                Ok(v)
            } else {
                Err(IngestError::ParseError { row: row + 1, column: config.target.clone(), value: value.to_string() })
            }
        }
        (Task::Regression, _) => parse_number(value, row, &config.target),
    }
}
