//! DuEE 1.0 corpus records, event schema, and the dev-set resplit.
//!
//! All offsets are counted in Unicode scalar values (code points), never bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: record {id:?}: {what}")]
    Validation { line: usize, id: String, what: String },
    #[error("line {line}: duplicate event type {event_type:?} in schema")]
    DuplicateEventType { line: usize, event_type: String },
    #[error("line {line}: event type {event_type:?} has an empty role list")]
    EmptyRoleList { line: usize, event_type: String },
    #[error("duplicate sentence id {0:?} within one split")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Number of event types in the official DuEE 1.0 schema.
pub const DUEE_EVENT_TYPES: usize = 65;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArgumentRecord {
    pub role: String,
    #[serde(rename = "argument")]
    pub text: String,
    #[serde(rename = "argument_start_index")]
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_type: String,
    #[serde(rename = "trigger")]
    pub trigger_text: String,
    #[serde(rename = "trigger_start_index")]
    pub trigger_start: usize,
    #[serde(default)]
    pub arguments: Vec<ArgumentRecord>,
}

impl EventRecord {
    pub fn trigger_end(&self) -> usize {
        self.trigger_start + self.trigger_text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSentence {
    pub id: String,
    pub text: String,
    #[serde(rename = "event_list", default)]
    pub events: Vec<EventRecord>,
}

impl RawSentence {
    /// Checks every gold span against the sentence text. Returns a description
    /// of the first bad span.
    pub fn validate_spans(&self) -> std::result::Result<(), String> {
        if self.text.is_empty() {
            return Err("empty text".into());
        }
        let chars: Vec<char> = self.text.chars().collect();
        let check = |what: &str, start: usize, span: &str| {
            let len = span.chars().count();
            if span.is_empty() {
                return Err(format!("{what} is empty"));
            }
            let end = start + len;
            if end > chars.len() {
                return Err(format!(
                    "{what} {span:?} at {start}..{end} exceeds text length {}",
                    chars.len()
                ));
            }
            let slice: String = chars[start..end].iter().collect();
            if slice != span {
                return Err(format!(
                    "{what} {span:?} at {start}..{end} does not match text slice {slice:?}"
                ));
            }
            Ok(())
        };
        for event in &self.events {
            check("trigger", event.trigger_start, &event.trigger_text)?;
            for arg in &event.arguments {
                check(&format!("argument ({})", arg.role), arg.start, &arg.text)?;
            }
        }
        Ok(())
    }

    /// Removes events repeating an earlier (type, trigger span); returns how many were dropped.
    pub fn dedup_events(&mut self) -> usize {
        let mut seen = HashSet::new();
        let before = self.events.len();
        self.events.retain(|e| {
            seen.insert((e.event_type.clone(), e.trigger_start, e.trigger_text.clone()))
        });
        before - self.events.len()
    }
}

/// Parses one DuEE line. `line_no` is 1-based and only used for error reporting.
pub fn parse_duee_record(line: &str, line_no: usize) -> Result<RawSentence> {
    let mut sentence: RawSentence =
        serde_json::from_str(line).map_err(|source| CorpusError::Parse {
            line: line_no,
            source,
        })?;
    sentence
        .validate_spans()
        .map_err(|what| CorpusError::Validation {
            line: line_no,
            id: sentence.id.clone(),
            what,
        })?;
    let dropped = sentence.dedup_events();
    if dropped > 0 {
        log::warn!(
            "line {line_no}: record {:?}: dropped {dropped} duplicate event(s)",
            sentence.id
        );
    }
    Ok(sentence)
}

/// Checks that every event type and role is known to the schema.
pub fn check_against_schema(
    sentence: &RawSentence,
    schema: &EventSchema,
) -> std::result::Result<(), String> {
    for event in &sentence.events {
        let Some(roles) = schema.roles(&event.event_type) else {
            return Err(format!("unknown event type {:?}", event.event_type));
        };
        for arg in &event.arguments {
            if !roles.iter().any(|r| r == &arg.role) {
                return Err(format!(
                    "role {:?} not permitted for {:?}",
                    arg.role, event.event_type
                ));
            }
        }
    }
    Ok(())
}

pub fn read_duee_str(content: &str) -> Result<Vec<RawSentence>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sentence = parse_duee_record(line, i + 1)?;
        if !ids.insert(sentence.id.clone()) {
            return Err(CorpusError::DuplicateId(sentence.id));
        }
        out.push(sentence);
    }
    Ok(out)
}

pub fn read_duee_file(path: &Path) -> Result<Vec<RawSentence>> {
    let content = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    read_duee_str(&content)
}

/// Reads a DuEE file and drops records that violate the schema, with a warning each.
pub fn read_duee_file_checked(path: &Path, schema: &EventSchema) -> Result<Vec<RawSentence>> {
    let mut sentences = read_duee_file(path)?;
    sentences.retain(|s| match check_against_schema(s, schema) {
        Ok(()) => true,
        Err(what) => {
            log::warn!("{}: record {:?} skipped: {what}", path.display(), s.id);
            false
        }
    });
    Ok(sentences)
}

pub fn write_duee_file(path: &Path, sentences: &[RawSentence]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| io_err(path, source))?;
    for s in sentences {
        let line = serde_json::to_string(s).expect("records serialize");
        writeln!(f, "{line}").map_err(|source| io_err(path, source))?;
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Deserialize)]
struct SchemaLine {
    event_type: String,
    role_list: Vec<SchemaRole>,
}

#[derive(Debug, Deserialize)]
struct SchemaRole {
    role: String,
}

/// Event type → ordered permitted roles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    types: BTreeMap<String, Vec<String>>,
}

impl EventSchema {
    pub fn from_entries<I, S, R>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<R>)>,
        S: Into<String>,
        R: Into<String>,
    {
        EventSchema {
            types: entries
                .into_iter()
                .map(|(t, roles)| (t.into(), roles.into_iter().map(Into::into).collect()))
                .collect(),
        }
    }

    pub fn parse(content: &str) -> Result<Self> {
        let mut types = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SchemaLine =
                serde_json::from_str(line).map_err(|source| CorpusError::Parse {
                    line: i + 1,
                    source,
                })?;
            if parsed.role_list.is_empty() {
                return Err(CorpusError::EmptyRoleList {
                    line: i + 1,
                    event_type: parsed.event_type,
                });
            }
            if types.contains_key(&parsed.event_type) {
                return Err(CorpusError::DuplicateEventType {
                    line: i + 1,
                    event_type: parsed.event_type,
                });
            }
            let roles = parsed.role_list.into_iter().map(|r| r.role).collect();
            types.insert(parsed.event_type, roles);
        }
        Ok(EventSchema { types })
    }

    /// Serializes in the DuEE schema line format.
    pub fn to_duee_lines(&self) -> String {
        let mut out = String::new();
        for (event_type, roles) in &self.types {
            let value = serde_json::json!({
                "event_type": event_type,
                "role_list": roles.iter().map(|r| serde_json::json!({"role": r})).collect::<Vec<_>>(),
            });
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn roles(&self, event_type: &str) -> Option<&[String]> {
        self.types.get(event_type).map(Vec::as_slice)
    }

    pub fn permits(&self, event_type: &str, role: &str) -> bool {
        self.roles(event_type)
            .is_some_and(|roles| roles.iter().any(|r| r == role))
    }

    /// Event types in sorted order.
    pub fn event_types(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    /// Distinct role names across all types, sorted.
    pub fn role_names(&self) -> Vec<String> {
        let mut roles: Vec<String> = self.types.values().flatten().cloned().collect();
        roles.sort();
        roles.dedup();
        roles
    }
}

pub fn load_schema(path: &Path) -> Result<EventSchema> {
    let content = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    let schema = EventSchema::parse(&content)?;
    log::info!("{}: {} event types", path.display(), schema.len());
    Ok(schema)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<RawSentence>,
    pub validation: Vec<RawSentence>,
    pub test: Vec<RawSentence>,
}

impl DatasetSplit {
    pub fn new(train: Vec<RawSentence>, dev: Vec<RawSentence>) -> Result<Self> {
        let (validation, test) = resplit_dev(dev);
        let split = DatasetSplit {
            train,
            validation,
            test,
        };
        let mut seen = HashSet::new();
        for s in split.train.iter().chain(&split.validation).chain(&split.test) {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(split)
    }
}

/// Size of the original DuEE 1.0 development set.
pub const DUEE_DEV_SIZE: usize = 1500;

/// Splits the development set in file order: the first third becomes the
/// validation set, the rest the test set (500/1000 for the DuEE dev set).
pub fn resplit_dev(dev: Vec<RawSentence>) -> (Vec<RawSentence>, Vec<RawSentence>) {
    if dev.len() != DUEE_DEV_SIZE {
        log::warn!(
            "development set has {} records (expected {DUEE_DEV_SIZE}); splitting 1/3 : 2/3",
            dev.len()
        );
    }
    let n_validation = dev.len() / 3;
    let mut validation = dev;
    let test = validation.split_off(n_validation);
    (validation, test)
}
