//! Job config files: one flat JSON document per job.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use datagen::{
    Dataset, FewshotPolicy, GenerationJob, LabelVerbalizer, MockRule, PromptTemplate, ProviderConfig, Strategy,
    Workflow,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub version: u32,
    /// Defaults from the subcommand when omitted.
    pub workflow: Option<Workflow>,

    pub task_description: String,
    pub label_options: Option<Vec<String>>,
    pub target_column: String,
    #[serde(default)]
    pub fewshot_columns: Vec<String>,
    pub inner_separator: Option<String>,
    pub example_separator: Option<String>,

    pub fewshot_dataset: Option<PathBuf>,
    /// Raw value -> label string, applied to the sampling column on load.
    pub fewshot_label_map: Option<BTreeMap<String, String>>,
    #[serde(default = "default_strategy")]
    pub fewshot_strategy: Strategy,
    /// 0 turns few-shot prompting off.
    #[serde(default = "default_examples")]
    pub fewshot_examples_per_prompt: usize,
    #[serde(default = "default_label_column")]
    pub fewshot_sampling_column: String,
    /// 0 turns few-shot prompting off; absent keeps the whole dataset.
    pub fewshot_pool_per_class: Option<usize>,
    #[serde(default)]
    pub seed: u64,

    pub unlabeled_dataset: Option<PathBuf>,
    /// Label column of label-conditioned output when no few-shot data is used.
    #[serde(default = "default_label_column")]
    pub label_column: String,
    pub max_prompt_calls: usize,
    pub target_count: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub output: PathBuf,
    pub report: Option<PathBuf>,

    pub provider: ProviderSection,
}

fn default_strategy() -> Strategy {
    Strategy::Uniform
}

fn default_examples() -> usize {
    2
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSection {
    Openai(OpenAiSection),
    Mock(MockSection),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenAiSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub request_timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub max_concurrent: Option<usize>,
    pub requests_per_minute: Option<u32>,
}

impl OpenAiSection {
    pub fn to_provider_config(&self) -> Result<ProviderConfig> {
        let d = ProviderConfig::default();
        let timeout = match self.request_timeout_secs {
            Some(s) if !(s.is_finite() && s > 0.0) => bail!("request_timeout_secs must be positive"),
            Some(s) => Duration::from_secs_f64(s),
            None => d.request_timeout,
        };
        let config = ProviderConfig {
            base_url: self.base_url.clone().unwrap_or(d.base_url),
            model: self.model.clone().unwrap_or(d.model),
            api_key_env: self.api_key_env.clone().unwrap_or(d.api_key_env),
            max_tokens: self.max_tokens.unwrap_or(d.max_tokens),
            temperature: self.temperature.unwrap_or(d.temperature),
            request_timeout: timeout,
            max_retries: self.max_retries.unwrap_or(d.max_retries),
            max_concurrent: self.max_concurrent.unwrap_or(d.max_concurrent),
            requests_per_minute: self.requests_per_minute.or(d.requests_per_minute),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_reply: String,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default = "one")]
    pub max_concurrent: usize,
}

fn one() -> usize {
    1
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_prompt_calls: Option<usize>,
    pub target_count: Option<usize>,
    pub fewshot_examples_per_prompt: Option<usize>,
    pub fewshot_pool_per_class: Option<usize>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl JobConfig {
    /// Reads `path`, rejects unknown keys and wrong versions, applies
    /// `overrides`, and resolves relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<JobConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: JobConfig = serde_json::from_str(&text).context("invalid config")?;
        if config.version != SCHEMA_VERSION {
            bail!("unsupported config version {} (expected {SCHEMA_VERSION})", config.version);
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.fewshot_dataset, &mut config.unlabeled_dataset, &mut config.cache_dir, &mut config.report]
            .into_iter()
            .flatten()
        {
            *p = base.join(&*p);
        }
        config.output = base.join(&config.output);

        let o = overrides;
        config.seed = o.seed.unwrap_or(config.seed);
        config.max_prompt_calls = o.max_prompt_calls.unwrap_or(config.max_prompt_calls);
        config.target_count = o.target_count.or(config.target_count);
        config.fewshot_examples_per_prompt = o.fewshot_examples_per_prompt.unwrap_or(config.fewshot_examples_per_prompt);
        config.fewshot_pool_per_class = o.fewshot_pool_per_class.or(config.fewshot_pool_per_class);
        if let Some(out) = &o.output {
            config.output = out.clone();
        }
        if let Some(report) = &o.report {
            config.report = Some(report.clone());
        }
        Ok(config)
    }

    pub fn workflow_for(&self, annotate: bool) -> Result<Workflow> {
        let implied = if annotate {
            Workflow::Annotate
        } else if self.label_options.as_ref().is_some_and(|o| !o.is_empty()) {
            Workflow::GenerateLabelConditioned
        } else {
            Workflow::GenerateUnlabeled
        };
        match self.workflow {
            None => Ok(implied),
            Some(Workflow::Annotate) if !annotate => bail!("workflow `annotate` runs with the `annotate` subcommand"),
            Some(w) if annotate && w != Workflow::Annotate => {
                bail!("the `annotate` subcommand needs workflow `annotate`, the config says {w:?}")
            }
            Some(w) => Ok(w),
        }
    }

    /// Workflow for commands that accept any: explicit, else annotate when an
    /// unlabeled dataset is configured.
    pub fn inferred_workflow(&self) -> Workflow {
        match (self.workflow, &self.unlabeled_dataset) {
            (Some(w), _) => w,
            (None, Some(_)) => Workflow::Annotate,
            (None, None) => self.workflow_for(false).expect("no explicit workflow"),
        }
    }

    fn fewshot_enabled(&self) -> bool {
        self.fewshot_dataset.is_some() && self.fewshot_examples_per_prompt > 0 && self.fewshot_pool_per_class != Some(0)
    }

    pub fn build_job(&self, workflow: Workflow) -> Result<GenerationJob> {
        let mut template = PromptTemplate::new(
            self.task_description.clone(),
            self.label_options.clone(),
            self.target_column.clone(),
            self.fewshot_columns.clone(),
        )?;
        if self.inner_separator.is_some() || self.example_separator.is_some() {
            let inner = self.inner_separator.clone().unwrap_or_else(|| template.inner_separator().to_owned());
            let example = self.example_separator.clone().unwrap_or_else(|| template.example_separator().to_owned());
            template = template.with_separators(inner, example);
        }

        let mut job = GenerationJob::new(workflow, template, self.max_prompt_calls).with_seed(self.seed);
        job.label_column = self.label_column.clone();
        job.target_count = self.target_count;
        job.cache_dir = self.cache_dir.clone();

        if self.fewshot_enabled() {
            let path = self.fewshot_dataset.as_ref().expect("checked above");
            let mut dataset = Dataset::load(path).with_context(|| format!("loading few-shot dataset {}", path.display()))?;
            if let Some(map) = &self.fewshot_label_map {
                let verbalizer = LabelVerbalizer::new(self.fewshot_sampling_column.clone(), map.clone())?;
                dataset = dataset.verbalize(&verbalizer)?;
            }
            let policy = FewshotPolicy::new(
                self.fewshot_strategy,
                self.fewshot_examples_per_prompt,
                self.fewshot_sampling_column.clone(),
                self.fewshot_pool_per_class,
                self.seed,
            )?;
            job = job.with_fewshot(dataset, policy);
        }

        if let Some(path) = &self.unlabeled_dataset {
            let dataset =
                Dataset::load(path).with_context(|| format!("loading unlabeled dataset {}", path.display()))?;
            job = job.with_unlabeled(dataset);
        }
        job.validate()?;
        Ok(job)
    }
}
