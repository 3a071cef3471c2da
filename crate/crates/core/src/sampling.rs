//! Seeded few-shot example selection.
//!
//! Two strategies:
//! - `Uniform`: one class per prompt, chosen uniformly; every demonstration in
//!   the draw belongs to that class.
//! - `Stratified`: demonstrations spread across all classes, per-class counts
//!   differing by at most one.
//!
//! Every draw is a pure function of `(seed, call_index)`: the call index picks
//! the ChaCha stream, so draws do not depend on the order calls execute in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Record};

/// Stream reserved for pool shuffling, disjoint from any call index in practice.
const POOL_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("sampling column `{0}` not found")]
    MissingColumn(String),
    #[error("row {row} has no value in sampling column `{column}`")]
    NullClass { column: String, row: usize },
    #[error("label `{0}` has no few-shot examples")]
    EmptyClass(String),
    #[error("few-shot pool is empty")]
    EmptyPool,
    #[error("label `{label}` needs {needed} examples but only {available} are available")]
    InsufficientExamples {
        label: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid few-shot policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Stratified,
}

impl FromStr for Strategy {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Strategy::Uniform),
            "stratified" => Ok(Strategy::Stratified),
            other => Err(SamplingError::InvalidPolicy(format!("unknown strategy `{other}`"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Stratified => "stratified",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotPolicy {
    pub strategy: Strategy,
    pub examples_per_prompt: usize,
    pub sampling_column: String,
    pub pool_per_class: Option<usize>,
    pub seed: u64,
}

impl FewshotPolicy {
    pub fn new(
        strategy: Strategy,
        examples_per_prompt: usize,
        sampling_column: impl Into<String>,
        pool_per_class: Option<usize>,
        seed: u64,
    ) -> Result<Self, SamplingError> {
        let policy = FewshotPolicy {
            strategy,
            examples_per_prompt,
            sampling_column: sampling_column.into(),
            pool_per_class,
            seed,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.examples_per_prompt == 0 {
            return Err(SamplingError::InvalidPolicy("examples_per_prompt must be at least 1".into()));
        }
        match self.pool_per_class {
            Some(0) => Err(SamplingError::InvalidPolicy("pool_per_class must be at least 1".into())),
            Some(pool) if self.strategy == Strategy::Uniform && pool < self.examples_per_prompt => {
                Err(SamplingError::InvalidPolicy(format!(
                    "uniform draws take {} examples from one class but pool_per_class is {pool}",
                    self.examples_per_prompt
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Few-shot records grouped by class, classes in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FewshotPool {
    classes: BTreeMap<String, Vec<Record>>,
}

impl FewshotPool {
    pub fn classes(&self) -> impl Iterator<Item = (&str, &[Record])> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn get(&self, label: &str) -> Option<&[Record]> {
        self.classes.get(label).map(Vec::as_slice)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.values().all(Vec::is_empty)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotDraw {
    pub examples: Vec<Record>,
    pub drawn_label: Option<String>,
}

fn call_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Groups the few-shot dataset by class.
///
/// With `label_options`, only those classes are kept and each must have at
/// least one row. With `pool_per_class`, each class is shuffled with the
/// policy seed and cut to that many rows.
pub fn build_pool(
    dataset: &Dataset,
    policy: &FewshotPolicy,
    label_options: Option<&[String]>,
) -> Result<FewshotPool, SamplingError> {
    let column = policy.sampling_column.as_str();
    let values = dataset
        .column_values(column)
        .map_err(|_| SamplingError::MissingColumn(column.to_owned()))?;

    let mut classes: BTreeMap<String, Vec<Record>> = BTreeMap::new();
    for (row, (value, record)) in values.zip(dataset.rows()).enumerate() {
        let label = value.render().ok_or_else(|| SamplingError::NullClass {
            column: column.to_owned(),
            row,
        })?;
        if label_options.is_some_and(|opts| !opts.contains(&label)) {
            continue;
        }
        classes.entry(label).or_default().push(record.clone());
    }

    if let Some(options) = label_options {
        if let Some(missing) = options.iter().find(|o| !classes.contains_key(*o)) {
            return Err(SamplingError::EmptyClass(missing.clone()));
        }
    }

    if let Some(cap) = policy.pool_per_class {
        let mut rng = call_rng(policy.seed, POOL_STREAM);
        for records in classes.values_mut() {
            records.shuffle(&mut rng);
            records.truncate(cap);
        }
    }
    Ok(FewshotPool { classes })
}

/// Picks one label uniformly for call `call_index`, independent of any pool.
/// Used for label-conditioned generation without few-shot data.
pub fn draw_label(seed: u64, call_index: u64, options: &[String]) -> Option<&str> {
    if options.is_empty() {
        return None;
    }
    let mut rng = call_rng(seed, call_index);
    Some(options[rng.gen_range(0..options.len())].as_str())
}

/// Draws the few-shot examples for prompt call `call_index`.
pub fn draw(
    pool: &FewshotPool,
    policy: &FewshotPolicy,
    call_index: u64,
    label_options: Option<&[String]>,
) -> Result<FewshotDraw, SamplingError> {
    if pool.is_empty() {
        return Err(SamplingError::EmptyPool);
    }
    let mut rng = call_rng(policy.seed, call_index);
    let k = policy.examples_per_prompt;
    match policy.strategy {
        Strategy::Uniform => {
            let labels: Vec<&str> = match label_options {
                Some(opts) if !opts.is_empty() => opts.iter().map(String::as_str).collect(),
                _ => pool.labels().collect(),
            };
            let label = labels[rng.gen_range(0..labels.len())];
            let records = pool.get(label).unwrap_or_default();
            if records.len() < k {
                return Err(SamplingError::InsufficientExamples {
                    label: label.to_owned(),
                    needed: k,
                    available: records.len(),
                });
            }
            let examples = index::sample(&mut rng, records.len(), k)
                .into_iter()
                .map(|i| records[i].clone())
                .collect();
            Ok(FewshotDraw {
                examples,
                drawn_label: Some(label.to_owned()),
            })
        }
        Strategy::Stratified => {
            let mut order: Vec<(&str, &[Record])> = pool.classes().filter(|(_, r)| !r.is_empty()).collect();
            // Rotating class order decides which classes receive the remainder.
            order.shuffle(&mut rng);
            let n_classes = order.len();
            let base = k / n_classes;
            let extra = k % n_classes;

            let mut picks: Vec<Vec<usize>> = Vec::with_capacity(n_classes);
            for (pos, (label, records)) in order.iter().enumerate() {
                let quota = base + usize::from(pos < extra);
                if records.len() < quota {
                    return Err(SamplingError::InsufficientExamples {
                        label: (*label).to_owned(),
                        needed: quota,
                        available: records.len(),
                    });
                }
                picks.push(index::sample(&mut rng, records.len(), quota).into_vec());
            }

            let rounds = base + usize::from(extra > 0);
            let mut examples = Vec::with_capacity(k);
            for round in 0..rounds {
                for ((_, records), chosen) in order.iter().zip(&picks) {
                    if let Some(&i) = chosen.get(round) {
                        examples.push(records[i].clone());
                    }
                }
            }
            Ok(FewshotDraw {
                examples,
                drawn_label: None,
            })
        }
    }
}
