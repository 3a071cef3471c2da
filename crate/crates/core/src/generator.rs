//! The generation loop: unlabeled generation, label-conditioned generation and
//! annotation of an existing dataset.
//!
//! Each prompt call produces at most one output row. Calls run in waves of up
//! to the provider's concurrency; rows are collected by call index, so the
//! output is independent of completion order. Responses go through an optional
//! [`ResponseCache`] so an interrupted job can be rerun and replay what it
//! already paid for.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{cache_key, CachedResponse, ResponseCache};
use crate::dataset::{Dataset, DatasetError, Record, Value};
use crate::llm::{CompletionProvider, CompletionRequest, FinishReason, LlmError};
use crate::prompt::{render, render_annotation, PromptError, PromptTemplate, RenderedPrompt};
use crate::sampling::{self, build_pool, FewshotPolicy, FewshotPool, SamplingError, Strategy};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("prompt call {call_index}: {source}")]
    Llm {
        call_index: u64,
        #[source]
        source: LlmError,
    },
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

impl GeneratorError {
    /// Whether the failure came from the model provider rather than the job setup.
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, GeneratorError::Llm { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workflow {
    GenerateUnlabeled,
    GenerateLabelConditioned,
    Annotate,
}

impl FromStr for Workflow {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generate_unlabeled" => Ok(Workflow::GenerateUnlabeled),
            "generate_label_conditioned" => Ok(Workflow::GenerateLabelConditioned),
            "annotate" => Ok(Workflow::Annotate),
            other => Err(GeneratorError::Config(format!("unknown workflow `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub workflow: Workflow,
    pub template: PromptTemplate,
    pub policy: Option<FewshotPolicy>,
    pub fewshot_dataset: Option<Dataset>,
    /// Rows to annotate; required for [`Workflow::Annotate`].
    pub unlabeled_dataset: Option<Dataset>,
    pub max_prompt_calls: usize,
    /// Desired number of output rows for the generate workflows.
    pub target_count: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    /// Label column of label-conditioned output when no few-shot policy names one.
    pub label_column: String,
    /// Seeds the label choice when label-conditioned generation runs without few-shot data.
    pub seed: u64,
}

impl GenerationJob {
    pub fn new(workflow: Workflow, template: PromptTemplate, max_prompt_calls: usize) -> Self {
        GenerationJob {
            workflow,
            template,
            policy: None,
            fewshot_dataset: None,
            unlabeled_dataset: None,
            max_prompt_calls,
            target_count: None,
            cache_dir: None,
            label_column: "label".into(),
            seed: 0,
        }
    }

    pub fn with_fewshot(mut self, dataset: Dataset, policy: FewshotPolicy) -> Self {
        self.fewshot_dataset = Some(dataset);
        self.policy = Some(policy);
        self
    }

    pub fn with_unlabeled(mut self, dataset: Dataset) -> Self {
        self.unlabeled_dataset = Some(dataset);
        self
    }

    pub fn with_target_count(mut self, n: usize) -> Self {
        self.target_count = Some(n);
        self
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let config = |msg: String| Err(GeneratorError::Config(msg));
        self.template.validate()?;
        if self.max_prompt_calls == 0 {
            return config("max_prompt_calls must be at least 1".into());
        }
        if self.target_count == Some(0) {
            return config("target_count must be at least 1 when set".into());
        }
        match (&self.policy, &self.fewshot_dataset) {
            (Some(p), Some(_)) => p.validate()?,
            (None, None) => {}
            (Some(_), None) => return config("a few-shot policy was given without a few-shot dataset".into()),
            (None, Some(_)) => return config("a few-shot dataset was given without a few-shot policy".into()),
        }
        let options = self.template.label_options().unwrap_or_default();
        match self.workflow {
            Workflow::GenerateUnlabeled => {
                if self.unlabeled_dataset.is_some() {
                    return config("generate_unlabeled does not take an unlabeled dataset".into());
                }
            }
            Workflow::GenerateLabelConditioned => {
                if options.is_empty() {
                    return config("label-conditioned generation needs label options".into());
                }
                if let Some(p) = &self.policy {
                    if p.strategy != Strategy::Uniform {
                        return config(
                            "label-conditioned generation shows demonstrations of the conditioned label only; use the uniform strategy".into(),
                        );
                    }
                }
                if self.output_label_column() == self.template.target_column() {
                    return config("label column and target column must differ".into());
                }
            }
            Workflow::Annotate => {
                if self.unlabeled_dataset.is_none() {
                    return config("annotate needs an unlabeled dataset".into());
                }
                if options.is_empty() {
                    return config("annotate needs label options".into());
                }
                warn_on_overlapping_options(options);
            }
        }
        Ok(())
    }

    fn output_label_column(&self) -> &str {
        self.policy.as_ref().map_or(self.label_column.as_str(), |p| p.sampling_column.as_str())
    }

    fn output_columns(&self) -> Vec<String> {
        let target = self.template.target_column().to_owned();
        match self.workflow {
            Workflow::GenerateUnlabeled => vec![target],
            Workflow::GenerateLabelConditioned => vec![target, self.output_label_column().to_owned()],
            Workflow::Annotate => {
                let mut columns = self.unlabeled_dataset.as_ref().map(|d| d.columns().to_vec()).unwrap_or_default();
                if !columns.contains(&target) {
                    columns.push(target);
                }
                columns
            }
        }
    }
}

fn warn_on_overlapping_options(options: &[String]) {
    let normalized: Vec<String> = options.iter().map(|o| normalize_label(o)).collect();
    for (i, a) in normalized.iter().enumerate() {
        for b in &normalized[i + 1..] {
            if a.contains(b.as_str()) || b.contains(a.as_str()) {
                warn!("label options `{a}` and `{b}` overlap; label parsing may be ambiguous");
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxPromptCalls,
    TargetReached,
    DatasetExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxPromptCalls => "maximum number of prompt calls reached",
            StopReason::TargetReached => "target row count reached",
            StopReason::DatasetExhausted => "every unlabeled row processed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Rows with a usable value (for annotation: a parsed label).
    pub rows_produced: usize,
    pub prompt_calls: usize,
    pub parse_failures: usize,
    pub truncated: usize,
    pub cache_hits: usize,
    pub stop_reason: StopReason,
    #[serde(rename = "wall_time_secs", with = "secs")]
    pub wall_time: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(Duration::from_secs_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseLabelError {
    Unmatched(String),
    Ambiguous { raw: String, candidates: Vec<String> },
}

impl fmt::Display for ParseLabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseLabelError::Unmatched(raw) => write!(f, "no label option matches `{raw}`"),
            ParseLabelError::Ambiguous { raw, candidates } => {
                write!(f, "`{raw}` matches several label options: {}", candidates.join(", "))
            }
        }
    }
}

impl std::error::Error for ParseLabelError {}

fn normalize_label(s: &str) -> String {
    const EDGE: &[char] = &['"', '\'', '`'];
    const TERMINAL: &[char] = &['.', '!', '?', ',', ';', ':'];
    let mut s = s.trim().to_lowercase();
    loop {
        let trimmed = s.trim().trim_matches(EDGE).trim_end_matches(TERMINAL).trim();
        if trimmed.len() == s.len() {
            return s;
        }
        s = trimmed.to_owned();
    }
}

/// Maps a free-text model reply onto one of `options`.
///
/// Both sides are normalized (trimmed, lowercased, terminal punctuation and
/// surrounding quotes stripped), then matched in stages: exact equality, then
/// reply starts with an option, then option occurs inside the reply. The first
/// stage with any candidate decides; several candidates there is ambiguous.
pub fn parse_label(raw: &str, options: &[String]) -> Result<String, ParseLabelError> {
    let reply = normalize_label(raw);
    let normalized: Vec<(String, &String)> = options
        .iter()
        .map(|o| (normalize_label(o), o))
        .filter(|(n, _)| !n.is_empty())
        .collect();
    let stages: [&dyn Fn(&str) -> bool; 3] = [
        &|opt| reply == opt,
        &|opt| reply.starts_with(opt),
        &|opt| reply.contains(opt),
    ];
    for matches in stages {
        let hits: Vec<&String> = normalized.iter().filter(|(n, _)| matches(n)).map(|(_, o)| *o).collect();
        match hits.as_slice() {
            [] => continue,
            [one] => return Ok((*one).clone()),
            many => {
                return Err(ParseLabelError::Ambiguous {
                    raw: raw.to_owned(),
                    candidates: many.iter().map(|s| (*s).clone()).collect(),
                })
            }
        }
    }
    Err(ParseLabelError::Unmatched(raw.to_owned()))
}

/// Job plus everything derived from it once up front.
struct Prepared<'a> {
    job: &'a GenerationJob,
    pool: Option<FewshotPool>,
    options: Option<&'a [String]>,
}

impl<'a> Prepared<'a> {
    fn new(job: &'a GenerationJob) -> Result<Self, GeneratorError> {
        job.validate()?;
        let options = job.template.label_options().filter(|o| !o.is_empty());
        let pool = match (&job.policy, &job.fewshot_dataset) {
            (Some(policy), Some(dataset)) => {
                let restrict = match job.workflow {
                    Workflow::GenerateUnlabeled => None,
                    _ => options,
                };
                Some(build_pool(dataset, policy, restrict)?)
            }
            _ => None,
        };
        Ok(Prepared { job, pool, options })
    }

    /// Upper bound on calls given the data, before `max_prompt_calls`.
    fn available_calls(&self) -> Option<usize> {
        match self.job.workflow {
            Workflow::Annotate => self.job.unlabeled_dataset.as_ref().map(Dataset::len),
            _ => None,
        }
    }

    fn fewshot(&self, call_index: u64) -> Result<(Vec<Record>, Option<String>), GeneratorError> {
        match (&self.pool, &self.job.policy) {
            (Some(pool), Some(policy)) => {
                let restrict = match self.job.workflow {
                    Workflow::GenerateUnlabeled => None,
                    _ => self.options,
                };
                let draw = sampling::draw(pool, policy, call_index, restrict)?;
                Ok((draw.examples, draw.drawn_label))
            }
            _ => Ok((Vec::new(), None)),
        }
    }

    fn plan(&self, call_index: u64) -> Result<RenderedPrompt, GeneratorError> {
        let template = &self.job.template;
        let (examples, drawn_label) = self.fewshot(call_index)?;
        match self.job.workflow {
            Workflow::GenerateUnlabeled => Ok(render(template, None, &examples, None)?),
            Workflow::GenerateLabelConditioned => {
                let label = match drawn_label {
                    Some(label) => label,
                    None => {
                        let options = self.options.unwrap_or_default();
                        sampling::draw_label(self.job.seed, call_index, options)
                            .ok_or_else(|| GeneratorError::Config("no label options".into()))?
                            .to_owned()
                    }
                };
                Ok(render(template, Some(&label), &examples, None)?)
            }
            Workflow::Annotate => {
                let rows = self.job.unlabeled_dataset.as_ref().map(Dataset::rows).unwrap_or_default();
                let row = rows
                    .get(call_index as usize)
                    .ok_or_else(|| GeneratorError::Config(format!("no unlabeled row {call_index}")))?;
                Ok(render_annotation(template, &examples, row, call_index as usize)?)
            }
        }
    }
}

/// Renders the first `n` prompts of `job` without calling any model.
pub fn dry_run(job: &GenerationJob, n: usize) -> Result<Vec<RenderedPrompt>, GeneratorError> {
    if n == 0 {
        return Err(GeneratorError::Config("dry run needs n >= 1".into()));
    }
    let prepared = Prepared::new(job)?;
    let limit = prepared.available_calls().unwrap_or(usize::MAX).min(job.max_prompt_calls).min(n);
    (0..limit as u64).map(|i| prepared.plan(i)).collect()
}

struct CallOutcome {
    text: String,
    finish_reason: FinishReason,
    cache_hit: bool,
}

fn execute_call<P: CompletionProvider + ?Sized>(
    provider: &P,
    cache: Option<&ResponseCache>,
    prompt: &RenderedPrompt,
    call_index: u64,
) -> Result<CallOutcome, GeneratorError> {
    let mut request = CompletionRequest::new(prompt.text.clone());
    let settings = provider.settings(&request);
    request.request_id = cache_key(&request.prompt_text, &settings, call_index);
    if let Some(hit) = cache.and_then(|c| c.get(&request.request_id)) {
        return Ok(CallOutcome {
            text: hit.text,
            finish_reason: hit.finish_reason,
            cache_hit: true,
        });
    }
    let response = provider
        .complete(&request)
        .map_err(|source| GeneratorError::Llm { call_index, source })?;
    if let Some(cache) = cache {
        cache.put(
            &request.request_id,
            &CachedResponse {
                text: response.text.clone(),
                finish_reason: response.finish_reason,
            },
        )?;
    }
    Ok(CallOutcome {
        text: response.text,
        finish_reason: response.finish_reason,
        cache_hit: false,
    })
}

/// Runs `job` against `provider` and returns the produced dataset.
pub fn generate<P: CompletionProvider + ?Sized>(
    job: &GenerationJob,
    provider: &P,
) -> Result<(Dataset, GenerationReport), GeneratorError> {
    let started = Instant::now();
    let prepared = Prepared::new(job)?;
    let cache = job.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
    let width = provider.max_concurrent().max(1);
    let options = prepared.options.unwrap_or_default();
    let target = job.template.target_column().to_owned();
    let label_column = job.output_label_column().to_owned();

    let mut rows: Vec<Record> = Vec::new();
    let mut report = GenerationReport {
        rows_produced: 0,
        prompt_calls: 0,
        parse_failures: 0,
        truncated: 0,
        cache_hits: 0,
        stop_reason: StopReason::MaxPromptCalls,
        wall_time: Duration::ZERO,
    };

    loop {
        let calls_left = job.max_prompt_calls - report.prompt_calls;
        let work_left = match (job.workflow, prepared.available_calls(), job.target_count) {
            (Workflow::Annotate, Some(n), _) => n - report.prompt_calls,
            (_, _, Some(t)) => t - report.rows_produced,
            _ => usize::MAX,
        };
        if work_left == 0 {
            report.stop_reason = match job.workflow {
                Workflow::Annotate => StopReason::DatasetExhausted,
                _ => StopReason::TargetReached,
            };
            break;
        }
        if calls_left == 0 {
            report.stop_reason = StopReason::MaxPromptCalls;
            break;
        }
        // Never launch more calls than rows still wanted: one row per call at most.
        let wave = calls_left.min(work_left).min(width);
        let first = report.prompt_calls as u64;
        let prompts = (first..first + wave as u64)
            .map(|i| prepared.plan(i))
            .collect::<Result<Vec<_>, _>>()?;

        let outcomes: Vec<Result<CallOutcome, GeneratorError>> = if wave == 1 {
            vec![execute_call(provider, cache.as_ref(), &prompts[0], first)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = prompts
                    .iter()
                    .enumerate()
                    .map(|(offset, prompt)| {
                        let cache = cache.as_ref();
                        s.spawn(move || execute_call(provider, cache, prompt, first + offset as u64))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };

        for (offset, outcome) in outcomes.into_iter().enumerate() {
            let outcome = outcome?;
            let call_index = first + offset as u64;
            let prompt = &prompts[offset];
            report.prompt_calls += 1;
            report.cache_hits += usize::from(outcome.cache_hit);
            if outcome.finish_reason == FinishReason::Length {
                report.truncated += 1;
            }
            match job.workflow {
                Workflow::GenerateUnlabeled | Workflow::GenerateLabelConditioned => {
                    let text = outcome.text.trim();
                    if text.is_empty() {
                        report.parse_failures += 1;
                        continue;
                    }
                    let mut row = Record::new();
                    row.insert(target.clone(), Value::text(text));
                    if let Some(label) = &prompt.conditioned_label {
                        row.insert(label_column.clone(), Value::label(label.clone()));
                    }
                    rows.push(row);
                    report.rows_produced += 1;
                }
                Workflow::Annotate => {
                    let source = job.unlabeled_dataset.as_ref().expect("validated");
                    let mut row = source.rows()[call_index as usize].clone();
                    match parse_label(&outcome.text, options) {
                        Ok(label) => {
                            row.insert(target.clone(), Value::Label(label));
                            report.rows_produced += 1;
                        }
                        Err(e) => {
                            warn!("row {call_index}: {e}");
                            row.insert(target.clone(), Value::Null);
                            report.parse_failures += 1;
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }

    report.wall_time = started.elapsed();
    info!(
        "generation finished: {} rows from {} prompt calls ({} cache hits, {} parse failures): {}",
        report.rows_produced, report.prompt_calls, report.cache_hits, report.parse_failures, report.stop_reason
    );
    let dataset = Dataset::new(job.output_columns(), rows)?;
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockProvider, MockRule};

    fn opts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn reviews(n: usize) -> Dataset {
        let rows = (0..n).map(|i| std::iter::once(("text", Value::text(format!("Review number {i}.")))).collect()).collect();
        Dataset::new(vec!["text".into()], rows).unwrap()
    }

    fn annotate_job(n: usize) -> GenerationJob {
        let template =
            PromptTemplate::new("Annotate the movie review either as: {}.", Some(opts(&["positive", "negative"])), "label", opts(&["text"]))
                .unwrap();
        GenerationJob::new(Workflow::Annotate, template, 100).with_unlabeled(reviews(n))
    }

    fn conditioned_job(max_calls: usize) -> GenerationJob {
        let template = PromptTemplate::new("Generate a {} movie review.", Some(opts(&["positive", "negative"])), "text", vec![]).unwrap();
        GenerationJob::new(Workflow::GenerateLabelConditioned, template, max_calls)
    }

    #[test]
    fn parse_label_cases() {
        let o = opts(&["positive", "negative"]);
        assert_eq!(parse_label(" Positive.", &o).unwrap(), "positive");
        assert_eq!(parse_label("The review is clearly negative in tone", &o).unwrap(), "negative");
        assert_eq!(parse_label("neutral", &o).unwrap_err(), ParseLabelError::Unmatched("neutral".into()));
        assert_eq!(
            parse_label("not positive, rather negative", &o).unwrap_err(),
            ParseLabelError::Ambiguous { raw: "not positive, rather negative".into(), candidates: o.clone() }
        );
        assert_eq!(parse_label("negative. The reviewer hated it.", &o).unwrap(), "negative");
        assert_eq!(parse_label("\"NEGATIVE\"", &o).unwrap(), "negative");
    }

    #[test]
    fn parse_label_keeps_option_spelling() {
        let o = opts(&["Sports", "World News"]);
        assert_eq!(parse_label("world news", &o).unwrap(), "World News");
    }

    #[test]
    fn annotate_three_rows() {
        let mock = MockProvider::new(vec![MockRule::new("positive, negative", "positive")], "??");
        let (ds, report) = generate(&annotate_job(3), &mock).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.column_values("label").unwrap().all(|v| *v == Value::label("positive")));
        assert_eq!((report.prompt_calls, report.parse_failures), (3, 0));
        assert_eq!(ds.columns(), &opts(&["text", "label"])[..]);
    }

    #[test]
    fn annotate_stops_when_dataset_exhausted() {
        let mock = MockProvider::new(vec![], "negative");
        let (ds, report) = generate(&annotate_job(5), &mock).unwrap();
        assert_eq!(report.prompt_calls, 5);
        assert_eq!(report.stop_reason, StopReason::DatasetExhausted);
        assert_eq!(ds.len(), 5);
        assert_eq!(mock.call_count(), 5);
    }

    #[test]
    fn conditioned_stops_at_max_calls() {
        let mock = MockProvider::new(vec![MockRule::new("movie review", "Loved it.")], "x");
        let job = conditioned_job(10).with_target_count(1000);
        let (ds, report) = generate(&job, &mock).unwrap();
        assert_eq!((report.prompt_calls, report.rows_produced), (10, 10));
        assert_eq!(report.stop_reason, StopReason::MaxPromptCalls);
        assert_eq!(ds.columns(), &opts(&["text", "label"])[..]);
    }

    #[test]
    fn conditioned_stops_at_target() {
        let mock = MockProvider::new(vec![], "A review.").with_max_concurrent(4);
        let job = conditioned_job(100).with_target_count(7);
        let (ds, report) = generate(&job, &mock).unwrap();
        assert_eq!((ds.len(), report.prompt_calls), (7, 7));
        assert_eq!(report.stop_reason, StopReason::TargetReached);
    }

    #[test]
    fn unparseable_reply_keeps_row_with_null() {
        let mock = MockProvider::new(vec![MockRule::new("Review number 1.", "no idea")], "positive");
        let (ds, report) = generate(&annotate_job(3), &mock).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rows()[1].get("label"), Some(&Value::Null));
        assert_eq!((report.rows_produced, report.parse_failures), (2, 1));
    }

    #[test]
    fn empty_generation_is_a_parse_failure() {
        let mock = MockProvider::new(vec![], "   ");
        let (ds, report) = generate(&conditioned_job(4), &mock).unwrap();
        assert!(ds.is_empty());
        assert_eq!((report.prompt_calls, report.parse_failures), (4, 4));
    }

    #[test]
    fn config_errors() {
        let mut job = annotate_job(2);
        job.unlabeled_dataset = None;
        assert!(matches!(job.validate(), Err(GeneratorError::Config(_))));

        let t = PromptTemplate::new("Generate a text.", None, "text", vec![]).unwrap();
        let job = GenerationJob::new(Workflow::GenerateLabelConditioned, t, 3);
        assert!(matches!(job.validate(), Err(GeneratorError::Config(_))));

        let mut job = conditioned_job(3);
        job.policy = Some(FewshotPolicy::new(Strategy::Stratified, 2, "label", None, 0).unwrap());
        job.fewshot_dataset = Some(Dataset::empty());
        assert!(matches!(job.validate(), Err(GeneratorError::Config(_))));

        assert!(matches!(conditioned_job(0).validate(), Err(GeneratorError::Config(_))));
    }

    #[test]
    fn dry_run_annotate_embeds_rows_in_order() {
        let prompts = dry_run(&annotate_job(5), 2).unwrap();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[0].text.contains("text: Review number 0.\nlabel: "));
        assert!(prompts[1].text.contains("text: Review number 1.\nlabel: "));
        assert_eq!(prompts[1].source_row_index, Some(1));
    }

    #[test]
    fn dry_run_is_deterministic() {
        let job = conditioned_job(10).with_seed(42);
        let a = dry_run(&job, 3).unwrap();
        assert_eq!(a, dry_run(&job, 3).unwrap());
        for p in &a {
            assert!(p.text.starts_with("Generate a positive movie review.") || p.text.starts_with("Generate a negative movie review."));
        }
    }

    #[test]
    fn zero_shot_calls_get_distinct_cache_entries() {
        let dir = tempfile::tempdir().unwrap();
        let t = PromptTemplate::new("Generate a text in the domain of history.", None, "text", vec![]).unwrap();
        let job = GenerationJob::new(Workflow::GenerateUnlabeled, t, 5).with_cache_dir(dir.path());
        let mock = MockProvider::new(vec![], "Some history.");
        let (ds, report) = generate(&job, &mock).unwrap();
        assert_eq!((ds.len(), report.cache_hits), (5, 0));
        assert_eq!(ResponseCache::open(dir.path()).unwrap().len(), 5);
        let (again, report) = generate(&job, &mock).unwrap();
        assert_eq!((again, report.cache_hits), (ds, 5));
        assert_eq!(mock.call_count(), 5);
    }
}
