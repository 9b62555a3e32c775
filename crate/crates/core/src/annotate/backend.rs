use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnnotateError, Annotator, DepEdge, Result, SyntaxAnnotation};

/// Annotator backend selection, as written in run configuration files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum AnnotatorBackend {
    /// Replays stored annotations keyed by sentence text.
    Fixture { path: PathBuf },
    /// Long-running child process speaking one JSON object per line.
    Command {
        command: String,
        #[serde(default = "default_command_version")]
        version: String,
    },
    /// A Stanford CoreNLP server.
    Corenlp {
        url: String,
        #[serde(default = "default_corenlp_version")]
        version: String,
    },
}

fn default_command_version() -> String {
    "command".into()
}

fn default_corenlp_version() -> String {
    "corenlp".into()
}

impl AnnotatorBackend {
    pub fn connect(&self) -> Result<Box<dyn Annotator>> {
        Ok(match self {
            AnnotatorBackend::Fixture { path } => Box::new(FixtureAnnotator::from_file(path)?),
            AnnotatorBackend::Command { command, version } => {
                Box::new(CommandAnnotator::new(command.clone(), version.clone()))
            }
            AnnotatorBackend::Corenlp { url, version } => {
                Box::new(CoreNlpAnnotator::new(url.clone(), version.clone()))
            }
        })
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct FixtureLine {
    text: String,
    annotation: SyntaxAnnotation,
}

/// Deterministic backend replaying stored annotations.
#[derive(Debug, Clone, Default)]
pub struct FixtureAnnotator {
    by_text: HashMap<String, SyntaxAnnotation>,
    version: String,
}

impl FixtureAnnotator {
    pub fn new(version: impl Into<String>) -> Self {
        FixtureAnnotator {
            by_text: HashMap::new(),
            version: version.into(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, annotation: SyntaxAnnotation) {
        self.by_text.insert(text.into(), annotation);
    }

    /// File format: one `{"text": ..., "annotation": {...}}` object per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| {
            AnnotateError::Transport(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        let mut fixture = FixtureAnnotator::new(format!(
            "fixture:{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("fixture")
        ));
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(line).map_err(|e| {
                AnnotateError::Backend(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            fixture.insert(parsed.text, parsed.annotation);
        }
        Ok(fixture)
    }

    pub fn write_file<'a>(
        path: &Path,
        entries: impl IntoIterator<Item = (&'a str, &'a SyntaxAnnotation)>,
    ) -> std::io::Result<()> {
        let mut out = String::new();
        for (text, annotation) in entries {
            let line = FixtureLine {
                text: text.to_string(),
                annotation: annotation.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("fixture lines serialize"));
            out.push('\n');
        }
        std::fs::write(path, out)
    }

    pub fn len(&self) -> usize {
        self.by_text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_text.is_empty()
    }
}

impl Annotator for FixtureAnnotator {
    fn version(&self) -> &str {
        &self.version
    }

    fn annotate_raw(&self, text: &str) -> Result<SyntaxAnnotation> {
        self.by_text
            .get(text)
            .cloned()
            .ok_or_else(|| AnnotateError::Backend(format!("no stored annotation for {text:?}")))
    }
}

struct ChildIo {
    _child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// External process backend. The command is run through `sh -c` once and
/// kept alive; each request writes `{"text": ...}` as one line to its stdin
/// and reads one `SyntaxAnnotation` JSON line back.
pub struct CommandAnnotator {
    command: String,
    version: String,
    io: Mutex<Option<ChildIo>>,
}

impl CommandAnnotator {
    pub fn new(command: String, version: String) -> Self {
        CommandAnnotator {
            command,
            version,
            io: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<ChildIo> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AnnotateError::Transport(format!("cannot start {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildIo {
            _child: child,
            stdin,
            stdout,
        })
    }
}

impl Annotator for CommandAnnotator {
    fn version(&self) -> &str {
        &self.version
    }

    fn annotate_raw(&self, text: &str) -> Result<SyntaxAnnotation> {
        let mut guard = self.io.lock().expect("annotator process lock poisoned");
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let io = guard.as_mut().expect("spawned above");
        let request = serde_json::json!({ "text": text }).to_string();
        let transport = |e: std::io::Error| AnnotateError::Transport(format!("{:?}: {e}", self.command));
        let exchange = (|| {
            writeln!(io.stdin, "{request}")?;
            io.stdin.flush()?;
            let mut line = String::new();
            let n = io.stdout.read_line(&mut line)?;
            Ok::<_, std::io::Error>((n, line))
        })();
        let (n, line) = match exchange {
            Ok(ok) => ok,
            Err(e) => {
                *guard = None;
                return Err(transport(e));
            }
        };
        if n == 0 {
            *guard = None;
            return Err(AnnotateError::Transport(format!(
                "{:?} closed its output",
                self.command
            )));
        }
        serde_json::from_str(&line).map_err(|e| AnnotateError::Backend(format!("bad response: {e}")))
    }
}

/// Stanford CoreNLP server backend (`tokenize,ssplit,pos,ner,depparse`).
pub struct CoreNlpAnnotator {
    url: String,
    version: String,
    agent: ureq::Agent,
}

impl CoreNlpAnnotator {
    pub fn new(url: String, version: String) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(120))
            .build();
        CoreNlpAnnotator {
            url,
            version,
            agent,
        }
    }
}

impl Annotator for CoreNlpAnnotator {
    fn version(&self) -> &str {
        &self.version
    }

    fn annotate_raw(&self, text: &str) -> Result<SyntaxAnnotation> {
        let props = serde_json::json!({
            "annotators": "tokenize,ssplit,pos,ner,depparse",
            "outputFormat": "json",
            "pipelineLanguage": "zh",
            "ssplit.isOneSentence": "true",
        });
        let response = self
            .agent
            .post(&self.url)
            .query("properties", &props.to_string())
            .send_string(text);
        let body: Value = match response {
            Ok(r) => r
                .into_json()
                .map_err(|e| AnnotateError::Backend(format!("bad CoreNLP response: {e}")))?,
            Err(ureq::Error::Status(code, r)) => {
                return Err(AnnotateError::Backend(format!(
                    "CoreNLP returned {code}: {}",
                    r.into_string().unwrap_or_default()
                )))
            }
            Err(e) => return Err(AnnotateError::Transport(format!("{}: {e}", self.url))),
        };
        corenlp_to_annotation(text, &body)
    }
}

/// Converts a CoreNLP JSON document (one sentence) to a [`SyntaxAnnotation`].
/// CoreNLP character offsets count UTF-16 code units; they are mapped to code points.
pub fn corenlp_to_annotation(text: &str, doc: &Value) -> Result<SyntaxAnnotation> {
    let bad = |what: &str| AnnotateError::Backend(format!("CoreNLP document: {what}"));
    let sentences = doc["sentences"].as_array().ok_or_else(|| bad("no sentences"))?;
    let [sentence] = sentences.as_slice() else {
        return Err(AnnotateError::Invalid(format!(
            "expected one sentence, got {}",
            sentences.len()
        )));
    };
    // utf16 offset -> code point offset
    let mut utf16_to_cp = Vec::new();
    for (cp, c) in text.chars().enumerate() {
        for _ in 0..c.len_utf16() {
            utf16_to_cp.push(cp);
        }
    }
    utf16_to_cp.push(text.chars().count());
    let cp = |u: u64| utf16_to_cp.get(u as usize).copied().ok_or_else(|| bad("offset out of range"));

    let tokens = sentence["tokens"].as_array().ok_or_else(|| bad("no tokens"))?;
    let mut ann = SyntaxAnnotation {
        words: Vec::new(),
        word_spans: Vec::new(),
        pos_tags: Vec::new(),
        ner_tags: Vec::new(),
        dep_edges: Vec::new(),
        root_index: 0,
    };
    let chars: Vec<char> = text.chars().collect();
    for tok in tokens {
        let begin = cp(tok["characterOffsetBegin"].as_u64().ok_or_else(|| bad("token offset"))?)?;
        let end = cp(tok["characterOffsetEnd"].as_u64().ok_or_else(|| bad("token offset"))?)?;
        ann.words.push(chars[begin..end].iter().collect());
        ann.word_spans.push((begin, end));
        ann.pos_tags.push(tok["pos"].as_str().unwrap_or("").to_string());
        ann.ner_tags.push(tok["ner"].as_str().unwrap_or("O").to_string());
    }
    let deps = sentence["basicDependencies"]
        .as_array()
        .ok_or_else(|| bad("no basicDependencies"))?;
    for dep in deps {
        let governor = dep["governor"].as_i64().ok_or_else(|| bad("governor"))?;
        let dependent = dep["dependent"].as_u64().ok_or_else(|| bad("dependent"))?;
        if dependent == 0 {
            return Err(bad("dependent index 0"));
        }
        let relation = dep["dep"].as_str().unwrap_or("dep");
        let relation = if governor == 0 { "root" } else { relation };
        ann.dep_edges
            .push(DepEdge::new(governor - 1, dependent as usize - 1, relation));
        if governor == 0 {
            ann.root_index = dependent as usize - 1;
        }
    }
    ann.dep_edges.sort_by_key(|e| e.dependent);
    Ok(ann)
}
