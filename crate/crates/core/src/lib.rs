//! Building blocks for producing labeled datasets with large language models:
//! tabular datasets, prompt templates, few-shot sampling, a rate-limited
//! completion client, the generation loop, sequence-labeling conversions and
//! agreement scoring.

pub mod cache;
pub mod dataset;
pub mod eval;
pub mod generator;
pub mod llm;
pub mod prompt;
pub mod sampling;
pub mod seqlabel;

pub use cache::{cache_key, CachedResponse, ResponseCache};
pub use dataset::{Dataset, DatasetError, LabelVerbalizer, Record, Value};
pub use eval::{classification_agreement, span_agreement, AgreementReport, EvalError, Task};
pub use generator::{
    dry_run, generate, parse_label, GenerationJob, GenerationReport, GeneratorError, ParseLabelError, StopReason,
    Workflow,
};
pub use llm::{
    CompletionProvider, CompletionRequest, CompletionResponse, FinishReason, LlmError, MockProvider, MockRule,
    OpenAiProvider, ProviderConfig,
};
pub use prompt::{render, render_annotation, PromptError, PromptTemplate, RenderedPrompt};
pub use sampling::{build_pool, draw, FewshotPolicy, FewshotPool, SamplingError, Strategy};
pub use seqlabel::{
    align_mentions, spans_to_tags, tags_to_spans, Decoding, EntitySpan, Mention, SeqLabelError, Tag, TaggedSentence,
};
