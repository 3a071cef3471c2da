//! Python bindings for the dataset generation toolkit.
//!
//! Records cross the boundary as plain dicts; tag sequences as lists of str;
//! spans as dicts with `start`, `end`, `label` and `surface`.

use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString, PyTuple};
use serde_json::{Map, Value as Json};

use datagen::seqlabel::Mention;
use datagen::{
    CompletionProvider, Decoding, EntitySpan, FewshotPolicy, LabelVerbalizer, ParseLabelError as CoreParseError,
    PromptTemplate, ProviderConfig, Record, Strategy, TaggedSentence, Value, Workflow,
};

create_exception!(datagen_py, ConfigError, PyValueError, "Invalid job, template, policy or dataset.");
create_exception!(datagen_py, ProviderError, PyRuntimeError, "The model provider failed.");
create_exception!(datagen_py, ParseLabelError, PyValueError, "A reply matched no label option, or several.");

fn config_err(e: impl std::fmt::Display) -> PyErr {
    ConfigError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &Json) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Json::Null => py.None().into_bound(py),
        Json::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Json::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => PyFloat::new(py, n.as_f64().unwrap_or(f64::NAN)).into_any(),
        },
        Json::String(s) => PyString::new(py, s).into_any(),
        Json::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Json::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn py_to_json(obj: &Bound<'_, PyAny>) -> PyResult<Json> {
    if obj.is_none() {
        return Ok(Json::Null);
    }
    if let Ok(b) = obj.cast::<PyBool>() {
        return Ok(Json::Bool(b.is_true()));
    }
    if obj.cast::<PyInt>().is_ok() {
        return Ok(Json::from(obj.extract::<i64>()?));
    }
    if let Ok(f) = obj.cast::<PyFloat>() {
        return Ok(serde_json::Number::from_f64(f.value()).map_or(Json::Null, Json::Number));
    }
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(Json::String(s.to_str()?.to_owned()));
    }
    if let Ok(d) = obj.cast::<PyDict>() {
        let mut map = Map::new();
        for (k, v) in d.iter() {
            map.insert(k.extract::<String>()?, py_to_json(&v)?);
        }
        return Ok(Json::Object(map));
    }
    if obj.cast::<PyList>().is_ok() || obj.cast::<PyTuple>().is_ok() {
        let items: Vec<Bound<'_, PyAny>> = obj.extract()?;
        return items.iter().map(py_to_json).collect::<PyResult<Vec<_>>>().map(Json::Array);
    }
    Err(PyValueError::new_err(format!("cannot convert {} to a dataset value", obj.get_type().name()?)))
}

fn record_from_py(obj: &Bound<'_, PyAny>) -> PyResult<Record> {
    let dict = obj.cast::<PyDict>().map_err(|_| PyValueError::new_err("records must be dicts"))?;
    let mut record = Record::new();
    for (k, v) in dict.iter() {
        let column: String = k.extract()?;
        let json = py_to_json(&v)?;
        let value = Value::from_json(&json)
            .ok_or_else(|| PyValueError::new_err(format!("column `{column}`: unsupported value {json}")))?;
        record.insert(column, value);
    }
    Ok(record)
}

fn record_to_py<'py>(py: Python<'py>, record: &Record, columns: &[String]) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    for c in columns {
        let v = record.get(c).map_or(Json::Null, Value::to_json);
        dict.set_item(c, json_to_py(py, &v)?)?;
    }
    Ok(dict)
}

fn records_from_py(records: &Bound<'_, PyAny>) -> PyResult<Vec<Record>> {
    let items: Vec<Bound<'_, PyAny>> = records.extract()?;
    items.iter().map(record_from_py).collect()
}

fn decoding(strict: bool) -> Decoding {
    if strict {
        Decoding::Strict
    } else {
        Decoding::Lenient
    }
}

/// A table of records with an ordered column list.
#[pyclass(name = "Dataset", module = "datagen_py", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: datagen::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from a list of dicts. Columns default to first-seen order.
    #[new]
    #[pyo3(signature = (records, columns=None))]
    fn new(records: &Bound<'_, PyAny>, columns: Option<Vec<String>>) -> PyResult<Self> {
        let rows = records_from_py(records)?;
        let columns = columns.unwrap_or_else(|| {
            let mut seen: Vec<String> = Vec::new();
            let items: Vec<Bound<'_, PyAny>> = records.extract().unwrap_or_default();
            for item in items {
                if let Ok(d) = item.cast::<PyDict>() {
                    for k in d.keys() {
                        if let Ok(k) = k.extract::<String>() {
                            if !seen.contains(&k) {
                                seen.push(k);
                            }
                        }
                    }
                }
            }
            seen
        });
        Ok(PyDataset { inner: datagen::Dataset::new(columns, rows).map_err(config_err)? })
    }

    /// Loads JSONL, or CSV when the path ends in `.csv`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: datagen::Dataset::load(&path).map_err(config_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(config_err)
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyDataset) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Dataset(columns={:?}, rows={})", self.inner.columns(), self.inner.len())
    }

    fn to_records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let list = PyList::empty(py);
        for row in self.inner.rows() {
            list.append(record_to_py(py, row, self.inner.columns())?)?;
        }
        Ok(list)
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl_string()
    }

    fn split_columns(&self, keep: Vec<String>) -> PyResult<Self> {
        Ok(PyDataset { inner: self.inner.split_columns(&keep).map_err(config_err)? })
    }

    /// Replaces raw values in `column` (e.g. class ids) with label strings.
    fn verbalize(&self, column: String, mapping: &Bound<'_, PyDict>) -> PyResult<Self> {
        let mut pairs = Vec::new();
        for (k, v) in mapping.iter() {
            pairs.push((k.str()?.to_str()?.to_owned(), v.extract::<String>()?));
        }
        let verbalizer = LabelVerbalizer::new(column, pairs).map_err(config_err)?;
        Ok(PyDataset { inner: self.inner.verbalize(&verbalizer).map_err(config_err)? })
    }
}

fn build_template(
    task_description: &str,
    target_column: &str,
    label_options: Option<Vec<String>>,
    fewshot_columns: Option<Vec<String>>,
) -> PyResult<PromptTemplate> {
    PromptTemplate::new(task_description, label_options, target_column, fewshot_columns.unwrap_or_default())
        .map_err(config_err)
}

/// Renders a generation prompt; `label` fills the `{}` placeholder.
#[pyfunction]
#[pyo3(signature = (task_description, target_column, label=None, label_options=None, fewshot_columns=None, fewshot=None, input_row=None))]
fn render(
    task_description: &str,
    target_column: &str,
    label: Option<&str>,
    label_options: Option<Vec<String>>,
    fewshot_columns: Option<Vec<String>>,
    fewshot: Option<&Bound<'_, PyAny>>,
    input_row: Option<&Bound<'_, PyAny>>,
) -> PyResult<String> {
    let template = build_template(task_description, target_column, label_options, fewshot_columns)?;
    let fewshot = fewshot.map(records_from_py).transpose()?.unwrap_or_default();
    let input = input_row.map(record_from_py).transpose()?;
    let rendered = datagen::render(&template, label, &fewshot, input.as_ref()).map_err(config_err)?;
    Ok(rendered.text)
}

/// Renders an annotation prompt listing every label option.
#[pyfunction]
#[pyo3(signature = (task_description, label_options, target_column, fewshot_columns, input_row, fewshot=None))]
fn render_annotation(
    task_description: &str,
    label_options: Vec<String>,
    target_column: &str,
    fewshot_columns: Vec<String>,
    input_row: &Bound<'_, PyAny>,
    fewshot: Option<&Bound<'_, PyAny>>,
) -> PyResult<String> {
    let template = build_template(task_description, target_column, Some(label_options), Some(fewshot_columns))?;
    let fewshot = fewshot.map(records_from_py).transpose()?.unwrap_or_default();
    let input = record_from_py(input_row)?;
    Ok(datagen::render_annotation(&template, &fewshot, &input, 0).map_err(config_err)?.text)
}

/// Maps a model reply onto one of `options`; raises ParseLabelError otherwise.
#[pyfunction]
fn parse_label(raw: &str, options: Vec<String>) -> PyResult<String> {
    datagen::parse_label(raw, &options).map_err(|e: CoreParseError| ParseLabelError::new_err(e.to_string()))
}

fn span_to_py<'py>(py: Python<'py>, s: &EntitySpan) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("start", s.start)?;
    d.set_item("end", s.end)?;
    d.set_item("label", &s.label)?;
    d.set_item("surface", &s.surface)?;
    Ok(d)
}

fn sentence(tokens: Vec<String>, tags: Vec<String>) -> PyResult<TaggedSentence> {
    TaggedSentence::new(tokens, tags).map_err(config_err)
}

#[pyfunction]
#[pyo3(signature = (tokens, tags, strict=false))]
fn tags_to_spans<'py>(py: Python<'py>, tokens: Vec<String>, tags: Vec<String>, strict: bool) -> PyResult<Bound<'py, PyList>> {
    let spans = datagen::tags_to_spans(&sentence(tokens, tags)?, decoding(strict)).map_err(config_err)?;
    let list = PyList::empty(py);
    for s in &spans {
        list.append(span_to_py(py, s)?)?;
    }
    Ok(list)
}

/// `spans` are dicts with `start`, `end` and `label`, or `(start, end, label)` tuples.
#[pyfunction]
fn spans_to_tags(tokens: Vec<String>, spans: &Bound<'_, PyAny>) -> PyResult<Vec<String>> {
    let items: Vec<Bound<'_, PyAny>> = spans.extract()?;
    let mut parsed = Vec::with_capacity(items.len());
    for item in items {
        let (start, end, label): (usize, usize, String) = match item.cast::<PyDict>() {
            Ok(d) => {
                let get = |k: &str| d.get_item(k)?.ok_or_else(|| PyValueError::new_err(format!("span is missing `{k}`")));
                (get("start")?.extract()?, get("end")?.extract()?, get("label")?.extract()?)
            }
            Err(_) => item.extract()?,
        };
        if start >= end || end > tokens.len() {
            return Err(config_err(format!("span {start}..{end} is out of range for {} tokens", tokens.len())));
        }
        parsed.push(EntitySpan::new(&tokens, start, end, label));
    }
    Ok(datagen::spans_to_tags(&tokens, &parsed).map_err(config_err)?.tags)
}

/// Returns `(tags, unaligned)` where unaligned mentions are `(surface, label)` tuples.
#[pyfunction]
fn align_mentions(tokens: Vec<String>, mentions: Vec<(String, String)>) -> (Vec<String>, Vec<(String, String)>) {
    let mentions: Vec<Mention> = mentions.into_iter().map(|(s, l)| Mention::new(s, l)).collect();
    let (sentence, missed) = datagen::align_mentions(&tokens, &mentions);
    (sentence.tags, missed.into_iter().map(|m| (m.surface, m.label)).collect())
}

fn report_to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    let value: Json = serde_json::from_str(json).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

/// `pred` and `gold` are lists of `(tokens, tags)` pairs.
#[pyfunction]
#[pyo3(signature = (pred, gold, strict=false))]
fn span_agreement<'py>(
    py: Python<'py>,
    pred: Vec<(Vec<String>, Vec<String>)>,
    gold: Vec<(Vec<String>, Vec<String>)>,
    strict: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let to_sentences = |pairs: Vec<(Vec<String>, Vec<String>)>| -> PyResult<Vec<TaggedSentence>> {
        pairs.into_iter().map(|(tok, tags)| sentence(tok, tags)).collect()
    };
    let report = datagen::span_agreement(&to_sentences(pred)?, &to_sentences(gold)?, decoding(strict)).map_err(config_err)?;
    report_to_py(py, &report.to_json())
}

/// Row-aligned label lists; `None` marks a missing label.
#[pyfunction]
fn classification_agreement<'py>(py: Python<'py>, pred: Vec<Option<String>>, gold: Vec<Option<String>>) -> PyResult<Bound<'py, PyAny>> {
    let column = |labels: Vec<Option<String>>| {
        let rows = labels
            .into_iter()
            .map(|l| std::iter::once(("label", l.map_or(Value::Null, Value::Label))).collect())
            .collect();
        datagen::Dataset::new(vec!["label".into()], rows).map_err(config_err)
    };
    let report = datagen::classification_agreement(&column(pred)?, &column(gold)?, "label").map_err(config_err)?;
    report_to_py(py, &report.to_json())
}

/// Offline provider: the first rule whose pattern occurs in the prompt wins.
#[pyclass(name = "MockProvider", module = "datagen_py")]
pub struct PyMockProvider {
    inner: datagen::MockProvider,
}

#[pymethods]
impl PyMockProvider {
    #[new]
    #[pyo3(signature = (rules=Vec::new(), default_reply=String::new(), max_concurrent=1, delay_ms=0))]
    fn new(rules: Vec<(String, String)>, default_reply: String, max_concurrent: usize, delay_ms: u64) -> Self {
        let rules = rules.into_iter().map(|(p, r)| datagen::MockRule::new(p, r)).collect();
        PyMockProvider {
            inner: datagen::MockProvider::new(rules, default_reply)
                .with_max_concurrent(max_concurrent)
                .with_delay(Duration::from_millis(delay_ms)),
        }
    }

    /// Every prompt received so far.
    fn received(&self) -> Vec<String> {
        self.inner.received()
    }

    #[getter]
    fn call_count(&self) -> usize {
        self.inner.call_count()
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint. The key is
/// read from the environment variable `api_key_env` at request time.
#[pyclass(name = "OpenAIProvider", module = "datagen_py")]
pub struct PyOpenAiProvider {
    inner: datagen::OpenAiProvider,
}

#[pymethods]
impl PyOpenAiProvider {
    #[new]
    #[pyo3(signature = (model=None, base_url=None, api_key_env=None, max_tokens=None, temperature=None, request_timeout_secs=None, max_retries=None, max_concurrent=None, requests_per_minute=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: Option<String>,
        base_url: Option<String>,
        api_key_env: Option<String>,
        max_tokens: Option<u32>,
        temperature: Option<f64>,
        request_timeout_secs: Option<f64>,
        max_retries: Option<u32>,
        max_concurrent: Option<usize>,
        requests_per_minute: Option<u32>,
    ) -> PyResult<Self> {
        let d = ProviderConfig::default();
        let config = ProviderConfig {
            base_url: base_url.unwrap_or(d.base_url),
            model: model.unwrap_or(d.model),
            api_key_env: api_key_env.unwrap_or(d.api_key_env),
            max_tokens: max_tokens.unwrap_or(d.max_tokens),
            temperature: temperature.unwrap_or(d.temperature),
            request_timeout: request_timeout_secs.map_or(d.request_timeout, Duration::from_secs_f64),
            max_retries: max_retries.unwrap_or(d.max_retries),
            max_concurrent: max_concurrent.unwrap_or(d.max_concurrent),
            requests_per_minute,
        };
        Ok(PyOpenAiProvider { inner: datagen::OpenAiProvider::new(config).map_err(config_err)? })
    }
}

/// A generation, label-conditioned generation, or annotation job.
#[pyclass(name = "GenerationJob", module = "datagen_py")]
pub struct PyGenerationJob {
    inner: datagen::GenerationJob,
}

#[pymethods]
impl PyGenerationJob {
    #[new]
    #[pyo3(signature = (
        workflow, task_description, target_column, max_prompt_calls, *,
        label_options=None, fewshot_columns=None, fewshot=None, fewshot_strategy="uniform",
        fewshot_examples_per_prompt=2, fewshot_sampling_column="label", fewshot_pool_per_class=None,
        unlabeled=None, target_count=None, seed=0, cache_dir=None, label_column="label"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        workflow: &str,
        task_description: &str,
        target_column: &str,
        max_prompt_calls: usize,
        label_options: Option<Vec<String>>,
        fewshot_columns: Option<Vec<String>>,
        fewshot: Option<PyDataset>,
        fewshot_strategy: &str,
        fewshot_examples_per_prompt: usize,
        fewshot_sampling_column: &str,
        fewshot_pool_per_class: Option<usize>,
        unlabeled: Option<PyDataset>,
        target_count: Option<usize>,
        seed: u64,
        cache_dir: Option<PathBuf>,
        label_column: &str,
    ) -> PyResult<Self> {
        let workflow: Workflow = workflow.parse().map_err(config_err)?;
        let template = build_template(task_description, target_column, label_options, fewshot_columns)?;
        let mut job = datagen::GenerationJob::new(workflow, template, max_prompt_calls).with_seed(seed);
        job.label_column = label_column.to_owned();
        job.target_count = target_count;
        job.cache_dir = cache_dir;
        if let Some(ds) = fewshot {
            let strategy: Strategy = fewshot_strategy.parse().map_err(config_err)?;
            let policy = FewshotPolicy::new(
                strategy,
                fewshot_examples_per_prompt,
                fewshot_sampling_column,
                fewshot_pool_per_class,
                seed,
            )
            .map_err(config_err)?;
            job = job.with_fewshot(ds.inner, policy);
        }
        if let Some(ds) = unlabeled {
            job = job.with_unlabeled(ds.inner);
        }
        job.validate().map_err(config_err)?;
        Ok(PyGenerationJob { inner: job })
    }

    /// The first `n` prompts, without calling any model.
    fn dry_run(&self, n: usize) -> PyResult<Vec<String>> {
        let prompts = datagen::dry_run(&self.inner, n).map_err(config_err)?;
        Ok(prompts.into_iter().map(|p| p.text).collect())
    }
}

/// Runs `job` against `provider`; returns `(dataset, report)`.
#[pyfunction]
fn generate<'py>(
    py: Python<'py>,
    job: &PyGenerationJob,
    provider: &Bound<'py, PyAny>,
) -> PyResult<(PyDataset, Bound<'py, PyAny>)> {
    let run = |p: &dyn CompletionProvider| py.detach(|| datagen::generate(&job.inner, p));
    let result = if let Ok(mock) = provider.cast::<PyMockProvider>() {
        run(&mock.borrow().inner)
    } else if let Ok(openai) = provider.cast::<PyOpenAiProvider>() {
        run(&openai.borrow().inner)
    } else {
        return Err(PyValueError::new_err("provider must be a MockProvider or OpenAIProvider"));
    };
    let (dataset, report) = result.map_err(|e| {
        if e.is_provider_failure() {
            ProviderError::new_err(e.to_string())
        } else {
            config_err(e)
        }
    })?;
    let report = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((PyDataset { inner: dataset }, report_to_py(py, &report)?))
}

#[pymodule]
fn datagen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGenerationJob>()?;
    m.add_class::<PyMockProvider>()?;
    m.add_class::<PyOpenAiProvider>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(render_annotation, m)?)?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(tags_to_spans, m)?)?;
    m.add_function(wrap_pyfunction!(spans_to_tags, m)?)?;
    m.add_function(wrap_pyfunction!(align_mentions, m)?)?;
    m.add_function(wrap_pyfunction!(span_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(classification_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("ProviderError", m.py().get_type::<ProviderError>())?;
    m.add("ParseLabelError", m.py().get_type::<ParseLabelError>())?;
    Ok(())
}
