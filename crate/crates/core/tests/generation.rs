use std::sync::atomic::{AtomicUsize, Ordering};

use datagen::llm::ModelSettings;
use datagen::{
    generate, CompletionProvider, CompletionRequest, CompletionResponse, Dataset, FewshotPolicy, GenerationJob,
    GeneratorError, LlmError, MockProvider, MockRule, PromptTemplate, Record, Strategy, Value, Workflow,
};

/// Delegates to a mock, then starts failing once `budget` calls have gone through.
struct Flaky {
    inner: MockProvider,
    budget: usize,
    used: AtomicUsize,
}

impl CompletionProvider for Flaky {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(LlmError::RetriesExhausted { last: "HTTP 503".into(), attempts: 6 });
        }
        self.inner.complete(request)
    }

    fn settings(&self, request: &CompletionRequest) -> ModelSettings {
        self.inner.settings(request)
    }

    fn max_concurrent(&self) -> usize {
        self.inner.max_concurrent()
    }
}

fn imdb_fewshot() -> Dataset {
    let rows: Vec<Record> = [
        ("A masterpiece of quiet tension.", "positive"),
        ("I laughed, I cried, I bought the soundtrack.", "positive"),
        ("Charming from start to finish.", "positive"),
        ("Two hours I will never get back.", "negative"),
        ("The plot collapses in the second act.", "negative"),
        ("Wooden acting and a muddy score.", "negative"),
    ]
    .into_iter()
    .map(|(t, l)| [("text", Value::text(t)), ("label", Value::label(l))].into_iter().collect())
    .collect();
    Dataset::new(vec!["text".into(), "label".into()], rows).unwrap()
}

fn listing_job(max_calls: usize) -> GenerationJob {
    let template = PromptTemplate::new(
        "Generate a {} movie review.",
        Some(vec!["positive".into(), "negative".into()]),
        "text",
        vec![],
    )
    .unwrap();
    let policy = FewshotPolicy::new(Strategy::Uniform, 2, "label", None, 42).unwrap();
    GenerationJob::new(Workflow::GenerateLabelConditioned, template, max_calls).with_fewshot(imdb_fewshot(), policy)
}

fn echo_mock() -> MockProvider {
    MockProvider::new(
        vec![
            MockRule::new("Generate a positive", "What a delightful film."),
            MockRule::new("Generate a negative", "A tedious mess."),
        ],
        "?",
    )
    .with_max_concurrent(4)
}

#[test]
fn conditioned_prompts_only_show_matching_demonstrations() {
    let mock = echo_mock();
    let (ds, report) = generate(&listing_job(40), &mock).unwrap();
    assert_eq!(report.rows_produced, 40);
    let fewshot = imdb_fewshot();
    // workers finish in any order, so read the label back from each prompt
    for prompt in mock.received() {
        let label = if prompt.starts_with("Generate a positive movie review.") { "positive" } else { "negative" };
        assert!(prompt.starts_with(&format!("Generate a {label} movie review.")));
        for other in fewshot.rows().iter().filter(|r| r.get("label").unwrap().as_str() != Some(label)) {
            assert!(!prompt.contains(other.get("text").unwrap().as_str().unwrap()));
        }
    }
    // mock replies follow the conditioned label
    for row in ds.rows() {
        let expected = match row.get("label").unwrap().as_str().unwrap() {
            "positive" => "What a delightful film.",
            _ => "A tedious mess.",
        };
        assert_eq!(row.get("text").unwrap().as_str(), Some(expected));
    }
}

#[test]
fn both_labels_appear() {
    let (ds, _) = generate(&listing_job(50), &echo_mock()).unwrap();
    let positives = ds.rows().iter().filter(|r| r.get("label") == Some(&Value::label("positive"))).count();
    assert!(positives > 5 && positives < 45, "{positives} positives of 50");
}

#[test]
fn output_is_deterministic_across_runs() {
    let a = generate(&listing_job(30), &echo_mock()).unwrap().0;
    let b = generate(&listing_job(30), &echo_mock()).unwrap().0;
    assert_eq!(a.to_jsonl_string(), b.to_jsonl_string());
}

#[test]
fn stratified_is_rejected_for_conditioned_generation() {
    let mut job = listing_job(5);
    job.policy = Some(FewshotPolicy::new(Strategy::Stratified, 2, "label", None, 0).unwrap());
    assert!(matches!(generate(&job, &echo_mock()), Err(GeneratorError::Config(_))));
}

#[test]
fn interrupted_job_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let uninterrupted = generate(&listing_job(100), &echo_mock()).unwrap().0;

    let job = listing_job(100).with_cache_dir(dir.path());
    let flaky = Flaky { inner: echo_mock(), budget: 50, used: AtomicUsize::new(0) };
    let err = generate(&job, &flaky).unwrap_err();
    assert!(err.is_provider_failure());

    let (resumed, report) = generate(&job, &echo_mock()).unwrap();
    assert!(report.cache_hits >= 50, "cache hits {}", report.cache_hits);
    assert_eq!(report.prompt_calls, 100);
    assert_eq!(resumed.to_jsonl_string(), uninterrupted.to_jsonl_string());

    let (_, again) = generate(&job, &echo_mock()).unwrap();
    assert_eq!(again.cache_hits, 100);
}

#[test]
fn annotation_keeps_every_input_column() {
    let rows: Vec<Record> = (0..4)
        .map(|i| {
            [("id", Value::Integer(i)), ("text", Value::text(format!("Movie {i} was fine."))), ("source", Value::Null)]
                .into_iter()
                .collect()
        })
        .collect();
    let input = Dataset::new(vec!["id".into(), "text".into(), "source".into()], rows).unwrap();
    let template = PromptTemplate::new(
        "Annotate the movie review either as: {}.",
        Some(vec!["positive".into(), "negative".into()]),
        "label",
        vec!["text".into()],
    )
    .unwrap();
    let job = GenerationJob::new(Workflow::Annotate, template, 10).with_unlabeled(input.clone());
    let mock = MockProvider::new(vec![MockRule::new("Movie 2", "Negative!")], "positive");
    let (out, _) = generate(&job, &mock).unwrap();
    assert_eq!(out.columns(), &["id", "text", "source", "label"].map(String::from)[..]);
    assert_eq!(out.split_columns(&["id", "text", "source"]).unwrap(), input);
    let labels: Vec<_> = out.column_values("label").unwrap().cloned().collect();
    assert_eq!(labels[2], Value::label("negative"));
    assert_eq!(labels[0], Value::label("positive"));
    // the input row is embedded without its missing column
    assert!(mock.received()[0].ends_with("text: Movie 0 was fine.\nlabel: "));
}
