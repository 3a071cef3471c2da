//! Prompt composition from a task description, label options, few-shot
//! demonstrations and an optional input row.
//!
//! Layout of a rendered prompt:
//!
//! ```text
//! <task description, placeholder filled>
//! <blank line>
//! context_col: value        <- one block per few-shot record
//! target_col: value
//! <blank line>
//! context_col: value        <- final block, input row context (if any)
//! target_col:               <- dangling completion cue
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Record, Value};

const PLACEHOLDER: &str = "{}";

/// Which record a missing column was expected in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordRole {
    Fewshot(usize),
    Input,
}

impl fmt::Display for RecordRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordRole::Fewshot(i) => write!(f, "few-shot record {i}"),
            RecordRole::Input => f.write_str("input row"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("column `{column}` missing or null in {record}")]
    MissingColumn { column: String, record: RecordRole },
    #[error("placeholder mismatch: {0}")]
    PlaceholderMismatch(String),
    #[error("label `{0}` is not one of the template's label options")]
    UnknownLabel(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

fn default_inner_separator() -> String {
    ": ".into()
}

fn default_example_separator() -> String {
    "\n\n".into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    task_description: String,
    label_options: Option<Vec<String>>,
    target_column: String,
    fewshot_columns: Vec<String>,
    inner_separator: String,
    example_separator: String,
}

impl PromptTemplate {
    pub fn new(
        task_description: impl Into<String>,
        label_options: Option<Vec<String>>,
        target_column: impl Into<String>,
        fewshot_columns: Vec<String>,
    ) -> Result<Self, PromptError> {
        let template = PromptTemplate {
            task_description: task_description.into(),
            label_options,
            target_column: target_column.into(),
            fewshot_columns,
            inner_separator: default_inner_separator(),
            example_separator: default_example_separator(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn with_separators(mut self, inner: impl Into<String>, example: impl Into<String>) -> Self {
        self.inner_separator = inner.into();
        self.example_separator = example.into();
        self
    }

    pub fn example_separator(&self) -> &str {
        &self.example_separator
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let slots = self.placeholder_count();
        if slots > 1 {
            return Err(PromptError::InvalidTemplate(format!(
                "task description has {slots} `{{}}` placeholders, at most one is supported"
            )));
        }
        if self.label_options.is_some() && slots != 1 {
            return Err(PromptError::PlaceholderMismatch(
                "label options are given but the task description has no `{}` placeholder".into(),
            ));
        }
        if self.target_column.is_empty() {
            return Err(PromptError::InvalidTemplate("target column is empty".into()));
        }
        if self.fewshot_columns.contains(&self.target_column) {
            return Err(PromptError::InvalidTemplate(format!(
                "target column `{}` cannot also be a few-shot context column",
                self.target_column
            )));
        }
        Ok(())
    }

    pub fn task_description(&self) -> &str {
        &self.task_description
    }

    pub fn label_options(&self) -> Option<&[String]> {
        self.label_options.as_deref()
    }

    pub fn target_column(&self) -> &str {
        &self.target_column
    }

    pub fn fewshot_columns(&self) -> &[String] {
        &self.fewshot_columns
    }

    pub fn inner_separator(&self) -> &str {
        &self.inner_separator
    }

    pub fn has_placeholder(&self) -> bool {
        self.placeholder_count() == 1
    }

    /// The text every rendered prompt ends with.
    pub fn completion_cue(&self) -> String {
        format!("{}{}", self.target_column, self.inner_separator)
    }

    fn placeholder_count(&self) -> usize {
        self.task_description.matches(PLACEHOLDER).count()
    }

    fn header(&self, fill: Option<&str>) -> Result<String, PromptError> {
        match (self.has_placeholder(), fill) {
            (true, Some(fill)) => Ok(self.task_description.replacen(PLACEHOLDER, fill, 1)),
            (false, None) => Ok(self.task_description.clone()),
            (true, None) => Err(PromptError::PlaceholderMismatch(
                "task description has a `{}` placeholder but no value to fill it".into(),
            )),
            (false, Some(_)) => Err(PromptError::PlaceholderMismatch(
                "a fill value was given but the task description has no `{}` placeholder".into(),
            )),
        }
    }

    fn line(&self, column: &str, value: &str) -> String {
        format!("{column}{}{value}", self.inner_separator)
    }

    fn cell(record: &Record, column: &str, role: RecordRole) -> Result<String, PromptError> {
        record
            .get(column)
            .and_then(Value::render)
            .ok_or_else(|| PromptError::MissingColumn {
                column: column.to_owned(),
                record: role,
            })
    }

    fn demonstration(&self, record: &Record, index: usize) -> Result<String, PromptError> {
        let role = RecordRole::Fewshot(index);
        let mut lines = Vec::with_capacity(self.fewshot_columns.len() + 1);
        for column in self.fewshot_columns.iter().chain(std::iter::once(&self.target_column)) {
            lines.push(self.line(column, &Self::cell(record, column, role)?));
        }
        Ok(lines.join("\n"))
    }

    fn query(&self, input: Option<&Record>) -> Result<String, PromptError> {
        let mut lines = Vec::new();
        if let Some(input) = input {
            for column in &self.fewshot_columns {
                lines.push(self.line(column, &Self::cell(input, column, RecordRole::Input)?));
            }
        }
        lines.push(self.completion_cue());
        Ok(lines.join("\n"))
    }

    fn assemble(&self, header: String, fewshot: &[Record], input: Option<&Record>) -> Result<String, PromptError> {
        let mut blocks = Vec::with_capacity(fewshot.len() + 2);
        blocks.push(header);
        for (i, record) in fewshot.iter().enumerate() {
            blocks.push(self.demonstration(record, i)?);
        }
        blocks.push(self.query(input)?);
        Ok(blocks.join(&self.example_separator))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub conditioned_label: Option<String>,
    pub source_row_index: Option<usize>,
}

/// Renders a generation prompt. `label` fills the placeholder for
/// label-conditioned generation and must then be one of the template's options.
pub fn render(
    template: &PromptTemplate,
    label: Option<&str>,
    fewshot: &[Record],
    input_row: Option<&Record>,
) -> Result<RenderedPrompt, PromptError> {
    if let (Some(label), Some(options)) = (label, template.label_options()) {
        if !options.iter().any(|o| o == label) {
            return Err(PromptError::UnknownLabel(label.to_owned()));
        }
    }
    let header = template.header(label)?;
    Ok(RenderedPrompt {
        text: template.assemble(header, fewshot, input_row)?,
        conditioned_label: label.map(str::to_owned),
        source_row_index: None,
    })
}

/// Renders an annotation prompt: the placeholder lists every label option,
/// demonstrations carry their gold target value, and the input row ends with
/// the dangling target cue.
pub fn render_annotation(
    template: &PromptTemplate,
    fewshot: &[Record],
    input_row: &Record,
    row_index: usize,
) -> Result<RenderedPrompt, PromptError> {
    let options = template.label_options().unwrap_or_default();
    if options.is_empty() {
        return Err(PromptError::PlaceholderMismatch(
            "annotation needs at least one label option to fill the placeholder".into(),
        ));
    }
    let header = template.header(Some(&options.join(", ")))?;
    Ok(RenderedPrompt {
        text: template.assemble(header, fewshot, Some(input_row))?,
        conditioned_label: None,
        source_row_index: Some(row_index),
    })
}
