//! NLP task specifications: prompt rendering from input tuples and parsing
//! of raw LLM text into typed task outputs.
//!
//! Four tasks ship built in: context-based question answering (`qa`),
//! natural language inference (`nli`), continuous sentiment analysis
//! (`sa`), and relation extraction (`re`). Tasks are defined by a JSON
//! list plus a separate prompt-template JSON keyed by task id, so new
//! tasks can be added without touching code.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled task list (`list_tasks.json`).
pub const BUILTIN_TASKS_JSON: &str = include_str!("../config/list_tasks.json");
/// Bundled prompt templates for the LLM under test, keyed by task id.
pub const BUILTIN_TASK_TEMPLATES_JSON: &str =
    include_str!("../config/template/sut_prompt_templates.json");

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("malformed task file: {reason}{}", task_id.as_deref().map(|t| format!(" (task `{t}`)")).unwrap_or_default())]
    MalformedTaskFile {
        task_id: Option<String>,
        reason: String,
    },
    #[error("arity mismatch: task `{task_id}` expects {expected} inputs, got {got}")]
    ArityMismatch {
        task_id: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed input data: {0}")]
    MalformedInputData(String),
}

/// Shape of a task's output and how to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OutputKind {
    #[serde(rename = "FREE_TEXT")]
    FreeText,
    #[serde(rename = "LABEL")]
    Label { vocabulary: Vec<String> },
    #[serde(rename = "NUMERIC_SCORE")]
    NumericScore { min: f64, max: f64 },
    #[serde(rename = "TUPLE_SET")]
    TupleSet { delimiter: String },
}

/// One NLP task: input slots, a zero-shot prompt template, and the
/// expected output shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub input_arity: usize,
    pub slot_names: Vec<String>,
    /// Template with `{INPUT_0}` .. `{INPUT_{arity-1}}` placeholders, each
    /// occurring exactly once.
    pub prompt_template: String,
    pub output_kind: OutputKind,
}

/// Parsed value of a task output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedOutput {
    Text(String),
    Label(String),
    Score(f64),
    Tuples(BTreeSet<Vec<String>>),
}

/// An LLM response interpreted under a task's output kind.
///
/// Parse failures are encoded in `parse_ok` rather than raised, so a
/// campaign keeps running; the owning record is then marked as a
/// verification failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutput {
    pub kind: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ParsedOutput>,
    pub parse_ok: bool,
}

impl TaskOutput {
    pub fn unparsed(kind: &str, text: &str) -> Self {
        Self {
            kind: kind.to_string(),
            text: text.to_string(),
            parsed: None,
            parse_ok: false,
        }
    }
}

impl OutputKind {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::FreeText => "FREE_TEXT",
            Self::Label { .. } => "LABEL",
            Self::NumericScore { .. } => "NUMERIC_SCORE",
            Self::TupleSet { .. } => "TUPLE_SET",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    id: String,
    input_arity: usize,
    slot_names: Vec<String>,
    output_kind: OutputKind,
}

/// Immutable collection of validated task specs.
#[derive(Debug, Clone)]
pub struct TaskCatalog {
    tasks: Vec<TaskSpec>,
    by_id: HashMap<String, usize>,
}

impl TaskCatalog {
    /// Validate and index a list of specs.
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self, TaskError> {
        let mut by_id = HashMap::new();
        for (i, task) in tasks.iter().enumerate() {
            validate_spec(task)?;
            if by_id.insert(task.id.clone(), i).is_some() {
                return Err(TaskError::MalformedTaskFile {
                    task_id: Some(task.id.clone()),
                    reason: "duplicate task id".into(),
                });
            }
        }
        Ok(Self { tasks, by_id })
    }

    /// The four bundled tasks.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TASKS_JSON, BUILTIN_TASK_TEMPLATES_JSON)
            .expect("bundled task files are valid")
    }

    /// Load from a task list file and its companion template file.
    pub fn load(tasks_path: &Path, templates_path: &Path) -> Result<Self, TaskError> {
        let tasks = fs::read_to_string(tasks_path).map_err(|e| TaskError::MalformedTaskFile {
            task_id: None,
            reason: format!("{}: {e}", tasks_path.display()),
        })?;
        let templates =
            fs::read_to_string(templates_path).map_err(|e| TaskError::MalformedTaskFile {
                task_id: None,
                reason: format!("{}: {e}", templates_path.display()),
            })?;
        Self::from_json(&tasks, &templates)
    }

    pub fn from_json(tasks_json: &str, templates_json: &str) -> Result<Self, TaskError> {
        let entries: Vec<TaskEntry> =
            serde_json::from_str(tasks_json).map_err(|e| TaskError::MalformedTaskFile {
                task_id: None,
                reason: e.to_string(),
            })?;
        let templates: HashMap<String, String> =
            serde_json::from_str(templates_json).map_err(|e| TaskError::MalformedTaskFile {
                task_id: None,
                reason: e.to_string(),
            })?;
        let tasks = entries
            .into_iter()
            .map(|e| {
                let prompt_template =
                    templates
                        .get(&e.id)
                        .cloned()
                        .ok_or_else(|| TaskError::MalformedTaskFile {
                            task_id: Some(e.id.clone()),
                            reason: "no prompt template for task".into(),
                        })?;
                Ok(TaskSpec {
                    id: e.id,
                    input_arity: e.input_arity,
                    slot_names: e.slot_names,
                    prompt_template,
                    output_kind: e.output_kind,
                })
            })
            .collect::<Result<Vec<_>, TaskError>>()?;
        Self::new(tasks)
    }

    pub fn get(&self, id: &str) -> Option<&TaskSpec> {
        self.by_id.get(id).map(|&i| &self.tasks[i])
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }
}

fn validate_spec(task: &TaskSpec) -> Result<(), TaskError> {
    let fail = |reason: String| TaskError::MalformedTaskFile {
        task_id: Some(task.id.clone()),
        reason,
    };
    if task.input_arity == 0 {
        return Err(fail("input_arity must be positive".into()));
    }
    if task.slot_names.len() != task.input_arity {
        return Err(fail(format!(
            "expected {} slot names, got {}",
            task.input_arity,
            task.slot_names.len()
        )));
    }
    for k in 0..task.input_arity {
        let placeholder = format!("{{INPUT_{k}}}");
        match task.prompt_template.matches(&placeholder).count() {
            1 => {}
            n => {
                return Err(fail(format!(
                    "placeholder {placeholder} must occur exactly once, found {n}"
                )))
            }
        }
    }
    match &task.output_kind {
        OutputKind::Label { vocabulary } if vocabulary.is_empty() => {
            Err(fail("label vocabulary must be non-empty".into()))
        }
        OutputKind::NumericScore { min, max } if min >= max => {
            Err(fail(format!("numeric range must have min < max, got [{min}, {max}]")))
        }
        OutputKind::TupleSet { delimiter } if delimiter.is_empty() => {
            Err(fail("tuple delimiter must be non-empty".into()))
        }
        _ => Ok(()),
    }
}

/// Substitute the input tuple into the task's prompt template.
pub fn render_prompt(task: &TaskSpec, inputs: &[String]) -> Result<String, TaskError> {
    if inputs.len() != task.input_arity {
        return Err(TaskError::ArityMismatch {
            task_id: task.id.clone(),
            expected: task.input_arity,
            got: inputs.len(),
        });
    }
    let mut prompt = task.prompt_template.clone();
    for (k, value) in inputs.iter().enumerate() {
        prompt = prompt.replace(&format!("{{INPUT_{k}}}"), value);
    }
    Ok(prompt)
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.\d+|\.\d+|\d+)").unwrap())
}

/// Interpret a raw LLM response under the task's output kind.
pub fn parse_output(task: &TaskSpec, raw: &str) -> TaskOutput {
    let kind = task.output_kind.tag().to_string();
    let text = raw.to_string();
    let parsed = match &task.output_kind {
        OutputKind::FreeText => Some(ParsedOutput::Text(raw.trim().to_string())),
        OutputKind::Label { vocabulary } => {
            let candidate = raw
                .trim()
                .trim_end_matches(['.', ',', '!', '?', ';', ':'])
                .trim()
                .to_lowercase();
            vocabulary
                .iter()
                .find(|v| v.to_lowercase() == candidate)
                .map(|v| ParsedOutput::Label(v.to_lowercase()))
        }
        OutputKind::NumericScore { min, max } => number_regex()
            .find(raw)
            .and_then(|m| m.as_str().parse::<f64>().ok())
            .filter(|v| v >= min && v <= max)
            .map(ParsedOutput::Score),
        OutputKind::TupleSet { delimiter } => {
            let tuples: BTreeSet<Vec<String>> = raw
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|line| {
                    line.split(delimiter.as_str())
                        .map(|f| f.trim().to_string())
                        .collect()
                })
                .collect();
            Some(ParsedOutput::Tuples(tuples))
        }
    };
    let parse_ok = parsed.is_some();
    TaskOutput {
        kind,
        text,
        parsed,
        parse_ok,
    }
}

/// Load the input-data file: a JSON array whose elements are single
/// strings (arity-1 tasks) or arrays of strings (arity-n tasks).
pub fn load_inputs(path: &Path) -> Result<Vec<Vec<String>>, TaskError> {
    let data = fs::read_to_string(path)
        .map_err(|e| TaskError::MalformedInputData(format!("{}: {e}", path.display())))?;
    parse_inputs(&data)
}

pub fn parse_inputs(json: &str) -> Result<Vec<Vec<String>>, TaskError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Element {
        Single(String),
        Tuple(Vec<String>),
    }
    let elements: Vec<Element> =
        serde_json::from_str(json).map_err(|e| TaskError::MalformedInputData(e.to_string()))?;
    elements
        .into_iter()
        .enumerate()
        .map(|(i, e)| match e {
            Element::Single(s) => Ok(vec![s]),
            Element::Tuple(t) if t.is_empty() => Err(TaskError::MalformedInputData(format!(
                "element {i} is an empty tuple"
            ))),
            Element::Tuple(t) => Ok(t),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_has_the_four_tasks() {
        let catalog = TaskCatalog::builtin();
        let ids: Vec<&str> = catalog.tasks().iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["qa", "nli", "sa", "re"]);
    }

    #[test]
    fn builtin_tasks_render_with_dummy_inputs() {
        let catalog = TaskCatalog::builtin();
        for task in catalog.tasks() {
            let inputs: Vec<String> = (0..task.input_arity).map(|k| format!("x{k}")).collect();
            let prompt = render_prompt(task, &inputs).unwrap();
            assert!(!prompt.contains("{INPUT_"), "unsubstituted placeholder in {}", task.id);
            for input in &inputs {
                assert!(prompt.contains(input));
            }
        }
    }

    #[test]
    fn qa_prompt_renders_verbatim() {
        let catalog = TaskCatalog::builtin();
        let qa = catalog.get("qa").unwrap();
        let inputs = vec![
            "The area in which a glacier forms is called a cirque.".to_string(),
            "What geological features formed by glaciers?".to_string(),
        ];
        let expected = "Here is some information: \"The area in which a glacier forms is called \
                        a cirque.\" Using only this information, nothing else, answer the \
                        following question: \"What geological features formed by glaciers?\" \
                        Keep your answer to a short sentence. If you cannot give an answer, \
                        write 'unknown'.";
        assert_eq!(render_prompt(qa, &inputs).unwrap(), expected);
    }

    #[test]
    fn identity_template_renders_input() {
        let task = TaskSpec {
            id: "t".into(),
            input_arity: 1,
            slot_names: vec!["text".into()],
            prompt_template: "{INPUT_0}".into(),
            output_kind: OutputKind::FreeText,
        };
        assert_eq!(render_prompt(&task, &["x".to_string()]).unwrap(), "x");
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let catalog = TaskCatalog::builtin();
        let qa = catalog.get("qa").unwrap();
        let err = render_prompt(qa, &["only one".to_string()]).unwrap_err();
        assert!(matches!(err, TaskError::ArityMismatch { expected: 2, got: 1, .. }));
    }

    #[test]
    fn missing_placeholder_fails_validation() {
        let tasks = r#"[{"id":"bad","input_arity":2,"slot_names":["a","b"],"output_kind":{"kind":"FREE_TEXT"}}]"#;
        let templates = r#"{"bad":"only {INPUT_0} here"}"#;
        let err = TaskCatalog::from_json(tasks, templates).unwrap_err();
        assert!(err.to_string().contains("INPUT_1"), "{err}");
    }

    #[test]
    fn empty_task_list_loads_empty() {
        let catalog = TaskCatalog::from_json("[]", "{}").unwrap();
        assert!(catalog.tasks().is_empty());
    }

    #[test]
    fn numeric_parse_takes_first_decimal() {
        let catalog = TaskCatalog::builtin();
        let sa = catalog.get("sa").unwrap();
        let out = parse_output(sa, "Sentiment: 0.85");
        assert!(out.parse_ok);
        assert_eq!(out.parsed, Some(ParsedOutput::Score(0.85)));
    }

    #[test]
    fn numeric_parse_rejects_out_of_range_and_missing() {
        let catalog = TaskCatalog::builtin();
        let sa = catalog.get("sa").unwrap();
        assert!(!parse_output(sa, "very positive").parse_ok);
        assert!(!parse_output(sa, "score 1.5 out of range").parse_ok);
    }

    #[test]
    fn label_parse_normalizes_case_and_punctuation() {
        let catalog = TaskCatalog::builtin();
        let nli = catalog.get("nli").unwrap();
        let out = parse_output(nli, "Entailment.");
        assert_eq!(out.parsed, Some(ParsedOutput::Label("entailment".into())));
        assert!(!parse_output(nli, "maybe").parse_ok);
    }

    #[test]
    fn tuple_set_parse_is_order_insensitive() {
        let catalog = TaskCatalog::builtin();
        let re = catalog.get("re").unwrap();
        let a = parse_output(re, "x | r | y\na | s | b");
        let b = parse_output(re, "a | s | b\nx | r | y");
        assert_eq!(a.parsed, b.parsed);
    }

    #[test]
    fn free_text_parse_is_idempotent_on_its_own_output() {
        let catalog = TaskCatalog::builtin();
        let qa = catalog.get("qa").unwrap();
        let once = parse_output(qa, "  some answer  ");
        let Some(ParsedOutput::Text(normalized)) = &once.parsed else {
            panic!("expected text");
        };
        let twice = parse_output(qa, normalized);
        assert_eq!(twice.parsed, once.parsed);
    }

    #[test]
    fn input_file_accepts_strings_and_tuples() {
        let inputs = parse_inputs(r#"["a", ["b", "c"]]"#).unwrap();
        assert_eq!(inputs, vec![vec!["a".to_string()], vec!["b".into(), "c".into()]]);
        assert!(parse_inputs(r#"[[]]"#).is_err());
        assert!(parse_inputs("not json").is_err());
    }
}
