use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde_json::json;

use datagen::seqlabel::{read_conll, write_conll, SpanDocument};
use datagen::{
    classification_agreement, dry_run as render_prompts, generate, span_agreement, CompletionProvider, Dataset,
    Decoding, GeneratorError, MockProvider, OpenAiProvider, TaggedSentence,
};

use crate::config::{JobConfig, Overrides, ProviderSection};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_CONFIG, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::config(error)
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: &Path, overrides: &Overrides) -> Result<JobConfig, Failure> {
    JobConfig::load(path, overrides).map_err(|e| Failure::config(e.context(path.display().to_string())))
}

fn in_config(path: &Path) -> impl Fn(anyhow::Error) -> Failure + '_ {
    move |e| Failure::config(e.context(path.display().to_string()))
}

fn build_provider(section: &ProviderSection) -> anyhow::Result<Box<dyn CompletionProvider>> {
    match section {
        ProviderSection::Mock(m) => Ok(Box::new(
            MockProvider::new(m.rules.clone(), m.default_reply.clone())
                .with_delay(Duration::from_millis(m.delay_ms))
                .with_max_concurrent(m.max_concurrent),
        )),
        ProviderSection::Openai(o) => {
            let config = o.to_provider_config()?;
            if std::env::var_os(&config.api_key_env).is_none() {
                return Err(anyhow!("environment variable {} is not set", config.api_key_env));
            }
            Ok(Box::new(OpenAiProvider::new(config)?))
        }
    }
}

fn print_prompts(prompts: &[datagen::RenderedPrompt]) {
    for (i, p) in prompts.iter().enumerate() {
        println!("### prompt {}", i + 1);
        println!("{}", p.text);
    }
}

pub fn dry_run(config_path: &Path, overrides: &Overrides, n: usize) -> CmdResult {
    let config = load_config(config_path, overrides)?;
    let job = config.build_job(config.inferred_workflow()).map_err(in_config(config_path))?;
    let prompts = render_prompts(&job, n).map_err(|e| in_config(config_path)(e.into()))?;
    print_prompts(&prompts);
    Ok(())
}

pub fn run_job(
    config_path: &Path,
    overrides: &Overrides,
    annotate: bool,
    dry_run_n: Option<usize>,
    drop_unparsed: bool,
) -> CmdResult {
    let config = load_config(config_path, overrides)?;
    let workflow = config.workflow_for(annotate).map_err(in_config(config_path))?;
    let job = config.build_job(workflow).map_err(in_config(config_path))?;
    if let Some(n) = dry_run_n {
        let prompts = render_prompts(&job, n).map_err(|e| in_config(config_path)(e.into()))?;
        print_prompts(&prompts);
        return Ok(());
    }

    let provider = build_provider(&config.provider).map_err(in_config(config_path))?;
    let (mut dataset, report) = generate(&job, provider.as_ref()).map_err(|e: GeneratorError| Failure {
        code: if e.is_provider_failure() { EXIT_PROVIDER } else { EXIT_CONFIG },
        error: anyhow::Error::new(e).context(config_path.display().to_string()),
    })?;
    let dropped = if drop_unparsed {
        let before = dataset.len();
        let target = job.template.target_column().to_owned();
        dataset = dataset.filter_rows(|r| r.get(&target).is_some_and(|v| !v.is_null()));
        before - dataset.len()
    } else {
        0
    };

    if let Some(parent) = config.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    dataset.save(&config.output).with_context(|| format!("writing {}", config.output.display()))?;

    let mut summary = serde_json::to_value(&report).expect("report serializes");
    let extra = json!({
        "config": config_path.display().to_string(),
        "workflow": workflow,
        "output": config.output.display().to_string(),
        "rows_written": dataset.len(),
        "rows_dropped": dropped,
        "stop_reason_text": report.stop_reason.to_string(),
    });
    summary.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let text = serde_json::to_string_pretty(&summary).expect("json");
    eprintln!("{text}");
    if let Some(path) = &config.report {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn decoding(strict: bool) -> Decoding {
    if strict {
        Decoding::Strict
    } else {
        Decoding::Lenient
    }
}

fn read_sentences_conll(path: &Path) -> anyhow::Result<Vec<TaggedSentence>> {
    read_conll(open(path)?).with_context(|| path.display().to_string())
}

fn read_span_documents(path: &Path) -> anyhow::Result<Vec<SpanDocument>> {
    let mut docs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SpanDocument =
            serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        docs.push(doc);
    }
    Ok(docs)
}

fn span_docs_to_sentences(path: &Path, docs: &[SpanDocument]) -> anyhow::Result<Vec<TaggedSentence>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| d.to_sentence().with_context(|| format!("{}: line {}", path.display(), i + 1)))
        .collect()
}

pub fn tags_to_spans(input: &Path, output: &Path, strict: bool) -> CmdResult {
    let sentences = read_sentences_conll(input)?;
    let mut out = create(output)?;
    for (i, s) in sentences.iter().enumerate() {
        let doc = SpanDocument::from_sentence(s, decoding(strict))
            .with_context(|| format!("{}: sentence {}", input.display(), i + 1))?;
        let line = serde_json::to_string(&doc).expect("span document serializes");
        writeln!(out, "{line}").context("writing output")?;
    }
    out.flush().context("writing output")?;
    Ok(())
}

pub fn spans_to_tags(input: &Path, output: &Path) -> CmdResult {
    let docs = read_span_documents(input)?;
    let sentences = span_docs_to_sentences(input, &docs)?;
    let mut out = create(output)?;
    write_conll(&mut out, &sentences).context("writing output")?;
    out.flush().context("writing output")?;
    Ok(())
}

fn read_tagged(path: &Path) -> anyhow::Result<Vec<TaggedSentence>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        span_docs_to_sentences(path, &read_span_documents(path)?)
    } else {
        read_sentences_conll(path)
    }
}

pub fn eval_classification(pred: &Path, gold: &Path, column: &str, as_json: bool) -> CmdResult {
    let p = Dataset::load(pred).with_context(|| pred.display().to_string())?;
    let g = Dataset::load(gold).with_context(|| gold.display().to_string())?;
    let report = classification_agreement(&p, &g, column).map_err(Failure::config)?;
    if as_json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}

pub fn eval_spans(pred: &Path, gold: &Path, strict: bool, as_json: bool) -> CmdResult {
    let p = read_tagged(pred)?;
    let g = read_tagged(gold)?;
    let report = span_agreement(&p, &g, decoding(strict)).map_err(Failure::config)?;
    if as_json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}
