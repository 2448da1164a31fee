//! Experiment drivers.
//!
//! * [`run_dyadic`]: one target, one peer voicing a chosen rank of the
//!   target's own distribution, optionally with a persona.
//! * [`run_group_grid`]: agreeing and disagreeing panels of every size up to
//!   `grid_max`, in every presentation format and order.
//! * [`run_control`]: five agents answer, see each other's answers under one
//!   of seven conditions, and revise once.
//!
//! Questions are processed in parallel. All randomness comes from
//! substreams keyed by question id, so output never depends on scheduling.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Response};
use crate::dataset::{Label, Question};
use crate::influence::{
    EducationLevel, HierarchyRole, InfluenceError, PeerCondition, Persona, PresentationFormat,
    PresentationOrder,
};
use crate::metrics::{answer_entropy, is_unanimous};

mod control;
mod dyadic;
mod grid;

pub use control::{run_control, GROUP_SIZE};
pub use dyadic::run_dyadic;
pub use grid::run_group_grid;

/// Runs fail when more than this fraction of work units error.
pub const ERROR_BUDGET: f64 = 0.10;

pub const AGREEABLE_PROMPT: &str = "Please be agreeable";
pub const STUBBORN_PROMPT: &str = "Please be stubborn";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{failed} of {units} work units failed, above the {pct}% error budget", pct = ERROR_BUDGET * 100.0)]
    ErrorBudget { failed: usize, units: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
}

/// Conditions of the dyadic study: a peer rank, or a persona voicing the 2nd-ranked answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DyadicCondition {
    First,
    Second,
    Random,
    Last,
    Graduate,
    College,
    HighSchool,
    Employer,
    Employee,
    InDomain,
    OutOfDomain,
}

impl DyadicCondition {
    pub const ALL: [DyadicCondition; 11] = [
        DyadicCondition::First,
        DyadicCondition::Second,
        DyadicCondition::Random,
        DyadicCondition::Last,
        DyadicCondition::Graduate,
        DyadicCondition::College,
        DyadicCondition::HighSchool,
        DyadicCondition::Employer,
        DyadicCondition::Employee,
        DyadicCondition::InDomain,
        DyadicCondition::OutOfDomain,
    ];

    pub fn peer_condition(self) -> PeerCondition {
        match self {
            DyadicCondition::First => PeerCondition::First,
            DyadicCondition::Random => PeerCondition::Random,
            DyadicCondition::Last => PeerCondition::Last,
            _ => PeerCondition::Second,
        }
    }

    /// Conditions compared against each other in significance tests.
    pub fn group(self) -> &'static str {
        match self {
            DyadicCondition::First
            | DyadicCondition::Second
            | DyadicCondition::Random
            | DyadicCondition::Last => "peer",
            DyadicCondition::Graduate | DyadicCondition::College | DyadicCondition::HighSchool => {
                "education"
            }
            DyadicCondition::Employer | DyadicCondition::Employee => "hierarchy",
            DyadicCondition::InDomain | DyadicCondition::OutOfDomain => "expertise",
        }
    }

    pub fn needs_domain(self) -> bool {
        matches!(self, DyadicCondition::InDomain | DyadicCondition::OutOfDomain)
    }

    /// Persona without the domain payload; expertise personas are built by the driver.
    fn fixed_persona(self) -> Persona {
        match self {
            DyadicCondition::Graduate => Persona::Education { level: EducationLevel::Graduate },
            DyadicCondition::College => Persona::Education { level: EducationLevel::College },
            DyadicCondition::HighSchool => Persona::Education { level: EducationLevel::HighSchool },
            DyadicCondition::Employer => Persona::Hierarchy { role: HierarchyRole::Employer },
            DyadicCondition::Employee => Persona::Hierarchy { role: HierarchyRole::Employee },
            _ => Persona::None,
        }
    }
}

impl fmt::Display for DyadicCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().expect("string variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum TrialCondition {
    Dyadic {
        condition: DyadicCondition,
    },
    Grid {
        format: PresentationFormat,
        order: PresentationOrder,
        n_agree: usize,
        n_disagree: usize,
    },
}

impl fmt::Display for TrialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialCondition::Dyadic { condition } => write!(f, "dyadic/{condition}"),
            TrialCondition::Grid { format, order, n_agree, n_disagree } => {
                write!(f, "grid/{format}/{order}/{n_agree}a_{n_disagree}d")
            }
        }
    }
}

/// One target agent on one question under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub question_id: String,
    pub benchmark: String,
    pub model_id: String,
    pub condition: TrialCondition,
    pub persona: Persona,
    /// The answer voiced by the (disagreeing, if any) peers.
    pub peer_choice: Label,
    pub original: Response,
    pub peer_block: String,
    pub revised: Response,
    pub flip: bool,
    pub self_confidence: f64,
    /// Probability of `peer_choice` under the target's original distribution.
    pub perceived_confidence: f64,
}

impl TrialRecord {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        q: &Question,
        benchmark: &str,
        model_id: &str,
        condition: TrialCondition,
        persona: Persona,
        peer_choice: Label,
        original: &Response,
        peer_block: String,
        revised: Response,
    ) -> TrialRecord {
        TrialRecord {
            question_id: q.id.clone(),
            benchmark: benchmark.to_string(),
            model_id: model_id.to_string(),
            condition,
            persona,
            peer_choice,
            flip: revised.choice != original.choice,
            self_confidence: original.confidence,
            perceived_confidence: original.distribution.prob(peer_choice),
            original: original.clone(),
            peer_block,
            revised,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCondition {
    Original,
    Cot,
    Baseline,
    StrongFactors,
    WeakFactors,
    StrongPrompt,
    WeakPrompt,
}

impl ControlCondition {
    pub const ALL: [ControlCondition; 7] = [
        ControlCondition::Original,
        ControlCondition::Cot,
        ControlCondition::Baseline,
        ControlCondition::StrongFactors,
        ControlCondition::WeakFactors,
        ControlCondition::StrongPrompt,
        ControlCondition::WeakPrompt,
    ];

    /// Whether agents see peers and revise.
    pub fn revises(self) -> bool {
        !matches!(self, ControlCondition::Original | ControlCondition::Cot)
    }

    pub fn system_prompt(self) -> Option<&'static str> {
        match self {
            ControlCondition::StrongPrompt => Some(AGREEABLE_PROMPT),
            ControlCondition::WeakPrompt => Some(STUBBORN_PROMPT),
            _ => None,
        }
    }
}

impl fmt::Display for ControlCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().expect("string variant"))
    }
}

/// One question under the five-agent protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub question_id: String,
    pub benchmark: String,
    pub model_id: String,
    pub condition: ControlCondition,
    pub initial_answers: Vec<Label>,
    pub final_answers: Vec<Label>,
    /// Absent when the condition has no revision round.
    pub flips: Option<u32>,
    pub entropy: f64,
    pub consensus: bool,
    pub gold: Option<Label>,
    /// Unanimous and equal to gold; absent without gold or with abstentions.
    pub accuracy: Option<bool>,
    /// Chain-of-thought answers that could not be parsed; those agents are left out of `final_answers`.
    pub abstentions: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub format: Option<PresentationFormat>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub order: Option<PresentationOrder>,
}

impl GroupOutcome {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        question_id: &str,
        benchmark: &str,
        model_id: &str,
        condition: ControlCondition,
        initial_answers: Vec<Label>,
        final_answers: Vec<Label>,
        gold: Option<Label>,
        revised: bool,
    ) -> GroupOutcome {
        let flips = revised.then(|| {
            initial_answers
                .iter()
                .zip(&final_answers)
                .filter(|(a, b)| a != b)
                .count() as u32
        });
        let consensus = is_unanimous(&final_answers);
        GroupOutcome {
            question_id: question_id.to_string(),
            benchmark: benchmark.to_string(),
            model_id: model_id.to_string(),
            condition,
            entropy: answer_entropy(&final_answers),
            consensus,
            accuracy: gold.map(|g| consensus && final_answers[0] == g),
            initial_answers,
            final_answers,
            flips,
            gold,
            abstentions: 0,
            format: None,
            order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitError {
    pub question_id: String,
    pub condition: String,
    pub message: String,
}

/// Records from one driver run, with the errors that were tolerated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput<T> {
    pub records: Vec<T>,
    pub errors: Vec<UnitError>,
    /// Work units attempted (errors included, skips excluded).
    pub units: usize,
    /// Units not applicable to a question, such as expertise without a domain.
    pub skipped: usize,
}

impl<T> Default for RunOutput<T> {
    fn default() -> Self {
        RunOutput {
            records: Vec::new(),
            errors: Vec::new(),
            units: 0,
            skipped: 0,
        }
    }
}

impl<T> RunOutput<T> {
    fn fail(&mut self, q: &Question, condition: impl fmt::Display, err: impl fmt::Display) {
        self.units += 1;
        self.errors.push(UnitError {
            question_id: q.id.clone(),
            condition: condition.to_string(),
            message: err.to_string(),
        });
    }

    fn push(&mut self, record: T) {
        self.units += 1;
        self.records.push(record);
    }

    fn absorb(&mut self, other: RunOutput<T>) {
        self.records.extend(other.records);
        self.errors.extend(other.errors);
        self.units += other.units;
        self.skipped += other.skipped;
    }
}

/// Runs `per_question` over all questions in parallel and enforces the error budget.
fn drive<T: Send>(
    questions: &[Question],
    per_question: impl Fn(&Question) -> RunOutput<T> + Sync,
) -> Result<RunOutput<T>, ProtocolError> {
    let parts: Vec<RunOutput<T>> = questions.par_iter().map(&per_question).collect();
    let mut out = RunOutput::default();
    for part in parts {
        out.absorb(part);
    }
    if out.errors.len() as f64 > ERROR_BUDGET * out.units as f64 {
        return Err(ProtocolError::ErrorBudget {
            failed: out.errors.len(),
            units: out.units,
        });
    }
    Ok(out)
}
