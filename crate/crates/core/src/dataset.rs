//! Multiple-choice benchmarks in the normalized line-delimited schema.
//!
//! Each line of a benchmark file is one JSON object:
//!
//! ```text
//! {"id": "q1", "question": "...", "choices": ["...", "..."], "gold": "B", "domain": "physics", "kind": "factual"}
//! ```
//!
//! Choice labels are not stored; they are regenerated as `A`, `B`, `C`, ...
//! in array order. Choices may also be written as `{"label": "A", "text": "..."}`
//! objects, in which case the labels must already be consecutive.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agents::{original_response, AgentError, AgentModel};
use crate::rng;

pub const MAX_CHOICES: usize = 26;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("question {id}: {rule}")]
    Validation { id: String, rule: String },
    #[error("question {id}: {source}")]
    Agent {
        id: String,
        #[source]
        source: AgentError,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// A single-letter choice label; `Label(0)` is `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(u8);

impl Label {
    pub fn from_index(index: usize) -> Option<Label> {
        (index < MAX_CHOICES).then_some(Label(index as u8))
    }

    pub fn from_char(c: char) -> Option<Label> {
        c.is_ascii_uppercase().then(|| Label(c as u8 - b'A'))
    }

    pub fn parse(s: &str) -> Option<Label> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Label::from_char(c),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }

    /// `n` consecutive labels starting at `A`.
    pub fn all(n: usize) -> impl Iterator<Item = Label> {
        (0..n.min(MAX_CHOICES)).map(|i| Label(i as u8))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Label::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid choice label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Factual,
    Opinionated,
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionKind::Factual => "factual",
            QuestionKind::Opinionated => "opinionated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// Choice texts; the choice at index `i` carries label `Label::from_index(i)`.
    pub choices: Vec<String>,
    pub gold: Option<Label>,
    pub domain: Option<String>,
    pub kind: QuestionKind,
}

impl Question {
    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> {
        Label::all(self.choices.len())
    }

    pub fn has_label(&self, label: Label) -> bool {
        label.index() < self.choices.len()
    }

    /// Checks every invariant of a question, returning the first rule broken.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |rule: &str| {
            Err(DatasetError::Validation {
                id: self.id.clone(),
                rule: rule.to_string(),
            })
        };
        if self.id.is_empty() {
            return fail("empty id");
        }
        if !(2..=MAX_CHOICES).contains(&self.choices.len()) {
            return fail(&format!(
                "choice count {} outside 2..={MAX_CHOICES}",
                self.choices.len()
            ));
        }
        match (self.kind, self.gold) {
            (QuestionKind::Factual, None) => return fail("factual question without gold label"),
            (QuestionKind::Factual, Some(g)) if !self.has_label(g) => {
                return fail(&format!("gold label {g} is not one of the choices"))
            }
            (QuestionKind::Opinionated, Some(_)) => {
                return fail("opinionated question must not carry a gold label")
            }
            _ => {}
        }
        if let Some(domain) = &self.domain {
            if !valid_domain(domain) {
                return fail(&format!("domain {domain:?} is not a non-empty lowercase token"));
            }
        }
        Ok(())
    }
}

// Lowercase words; single interior spaces allowed ("computer science").
fn valid_domain(domain: &str) -> bool {
    !domain.is_empty()
        && domain.trim() == domain
        && !domain.contains("  ")
        && domain
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, ' ' | '_' | '-'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub kind: QuestionKind,
    pub questions: Vec<Question>,
    pub domains: BTreeSet<String>,
}

impl Benchmark {
    /// Builds a benchmark, enforcing the per-question and cross-question invariants.
    pub fn new(
        name: impl Into<String>,
        kind: QuestionKind,
        questions: Vec<Question>,
    ) -> Result<Benchmark, DatasetError> {
        let mut seen = HashSet::new();
        for q in &questions {
            q.validate()?;
            if q.kind != kind {
                return Err(DatasetError::Validation {
                    id: q.id.clone(),
                    rule: format!("question kind {} differs from benchmark kind {kind}", q.kind),
                });
            }
            if !seen.insert(q.id.as_str()) {
                return Err(DatasetError::Validation {
                    id: q.id.clone(),
                    rule: "duplicate id".to_string(),
                });
            }
        }
        let domains = questions.iter().filter_map(|q| q.domain.clone()).collect();
        Ok(Benchmark {
            name: name.into(),
            kind,
            questions,
            domains,
        })
    }

    /// Same benchmark metadata over a different question subset.
    pub fn with_questions(&self, questions: Vec<Question>) -> Benchmark {
        Benchmark {
            name: self.name.clone(),
            kind: self.kind,
            questions,
            domains: self.domains.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawChoice {
    Text(String),
    Labeled { label: String, text: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    question: String,
    choices: Vec<RawChoice>,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    domain: Option<String>,
    kind: QuestionKind,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    question: &'a str,
    choices: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    domain: Option<&'a str>,
    kind: QuestionKind,
}

fn parse_record(line: &str, line_no: usize) -> Result<Question, DatasetError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let invalid = |rule: String| DatasetError::Validation {
        id: raw.id.clone(),
        rule,
    };
    let mut choices = Vec::with_capacity(raw.choices.len());
    for (i, choice) in raw.choices.iter().enumerate() {
        match choice {
            RawChoice::Text(text) => choices.push(text.clone()),
            RawChoice::Labeled { label, text } => {
                let expected = Label::from_index(i).map(Label::as_char);
                if label.chars().collect::<Vec<_>>() != expected.into_iter().collect::<Vec<_>>() {
                    return Err(invalid("non-consecutive labels".to_string()));
                }
                choices.push(text.clone());
            }
        }
    }
    let gold = match &raw.gold {
        None => None,
        Some(g) => Some(
            Label::parse(g).ok_or_else(|| invalid(format!("gold {g:?} is not a choice label")))?,
        ),
    };
    let question = Question {
        id: raw.id.clone(),
        text: raw.question,
        choices,
        gold,
        domain: raw.domain,
        kind: raw.kind,
    };
    question.validate()?;
    Ok(question)
}

/// Parses benchmark records from a reader; `name` becomes the benchmark name.
pub fn read_benchmark(name: &str, reader: impl BufRead) -> Result<Benchmark, DatasetError> {
    let mut questions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Io {
            path: name.to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        questions.push(parse_record(&line, i + 1)?);
    }
    let kind = match questions.first() {
        Some(q) => q.kind,
        None => {
            return Err(DatasetError::Argument(format!(
                "benchmark {name} contains no questions"
            )))
        }
    };
    Benchmark::new(name, kind, questions)
}

/// Loads a benchmark file. The benchmark is named after the file stem.
pub fn load_benchmark(path: &Path) -> Result<Benchmark, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "benchmark".to_string());
    read_benchmark(&name, BufReader::new(file))
}

pub fn write_benchmark(benchmark: &Benchmark, mut out: impl Write) -> std::io::Result<()> {
    for q in &benchmark.questions {
        let record = OutRecord {
            id: &q.id,
            question: &q.text,
            choices: &q.choices,
            gold: q.gold,
            domain: q.domain.as_deref(),
            kind: q.kind,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Draws `min(n, |questions|)` questions uniformly without replacement.
///
/// The draw uses the [`rng::DATASET_SAMPLE`] stream keyed by the benchmark
/// name, so it depends only on `(seed, benchmark name)`.
pub fn sample_questions(
    benchmark: &Benchmark,
    n: usize,
    seed: u64,
) -> Result<Vec<Question>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Argument("sample size must be at least 1".into()));
    }
    let amount = n.min(benchmark.questions.len());
    let mut rng = rng::substream(seed, rng::DATASET_SAMPLE, &benchmark.name);
    Ok(rand::seq::index::sample(&mut rng, benchmark.questions.len(), amount)
        .into_iter()
        .map(|i| benchmark.questions[i].clone())
        .collect())
}

/// Keeps questions whose most probable original answer has probability below `threshold`.
pub fn filter_contentious(
    benchmark: &Benchmark,
    agent: &dyn AgentModel,
    threshold: f64,
) -> Result<Vec<Question>, DatasetError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DatasetError::Argument(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    let mut kept = Vec::new();
    for q in &benchmark.questions {
        let response = original_response(agent, q).map_err(|e| DatasetError::Agent {
            id: q.id.clone(),
            source: e,
        })?;
        if response.distribution.max_probability() < threshold {
            kept.push(q.clone());
        }
    }
    Ok(kept)
}

/// Parameters for [`synthetic_benchmark`].
#[derive(Debug, Clone)]
pub struct SyntheticBenchmarkSpec {
    pub name: String,
    pub kind: QuestionKind,
    pub questions: usize,
    pub min_choices: usize,
    pub max_choices: usize,
    /// Domains assigned round-robin; empty means no domain tags.
    pub domains: Vec<String>,
}

/// Generates a placeholder benchmark for desk-scale runs with synthetic agents.
pub fn synthetic_benchmark(
    spec: &SyntheticBenchmarkSpec,
    seed: u64,
) -> Result<Benchmark, DatasetError> {
    if spec.min_choices < 2 || spec.max_choices > MAX_CHOICES || spec.min_choices > spec.max_choices
    {
        return Err(DatasetError::Argument(format!(
            "choice range {}..={} invalid",
            spec.min_choices, spec.max_choices
        )));
    }
    let mut rng = rng::substream(seed, "dataset.synthetic", &spec.name);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let questions = (0..spec.questions)
        .map(|i| {
            let n = rng.random_range(spec.min_choices..=spec.max_choices);
            let gold = match spec.kind {
                QuestionKind::Factual => Label::from_index(rng.random_range(0..n)),
                QuestionKind::Opinionated => None,
            };
            // burn one draw per question so texts differ between runs with different seeds
            let marker: f64 = noise.sample(&mut rng);
            Question {
                id: format!("{}-{i:04}", spec.name),
                text: format!("Synthetic question {i} ({marker:.3})"),
                choices: (0..n).map(|c| format!("option {}", c + 1)).collect(),
                gold,
                domain: (!spec.domains.is_empty()).then(|| spec.domains[i % spec.domains.len()].clone()),
                kind: spec.kind,
            }
        })
        .collect();
    Benchmark::new(spec.name.clone(), spec.kind, questions)
}
