//! Peer opinions and how they are put into words.
//!
//! The renderers here produce the exact prompt text shown to agents; the
//! golden corpus under `tests/golden/` pins every byte.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::ChoiceDistribution;
use crate::dataset::Label;

#[derive(Debug, Error, PartialEq)]
pub enum InfluenceError {
    #[error("{condition} needs at least two labels")]
    NoAlternative { condition: PeerCondition },
    #[error("invalid panel: {0}")]
    Panel(String),
    #[error("Reason format requires a reason for {agent}")]
    MissingReason { agent: String },
    #[error("{persona} persona cannot be rendered in the {format} format")]
    UnsupportedPersona {
        persona: PersonaTier,
        format: PresentationFormat,
    },
}

/// Which of the agent's own ranked answers the single peer voices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerCondition {
    First,
    Second,
    Random,
    Last,
}

impl PeerCondition {
    pub const ALL: [PeerCondition; 4] = [
        PeerCondition::First,
        PeerCondition::Second,
        PeerCondition::Random,
        PeerCondition::Last,
    ];
}

impl fmt::Display for PeerCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeerCondition::First => "first",
            PeerCondition::Second => "second",
            PeerCondition::Random => "random",
            PeerCondition::Last => "last",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EducationLevel {
    Graduate,
    College,
    HighSchool,
}

impl EducationLevel {
    fn phrase(self) -> &'static str {
        match self {
            EducationLevel::Graduate => "graduate degree",
            EducationLevel::College => "college degree",
            EducationLevel::HighSchool => "high school diploma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyRole {
    Employer,
    Employee,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Persona {
    None,
    Education { level: EducationLevel },
    Hierarchy { role: HierarchyRole },
    /// `domain` is the peer's claimed expertise; `in_domain` says whether it
    /// matches the question's own domain.
    Expertise { domain: String, in_domain: bool },
}

impl Persona {
    pub fn tier(&self) -> PersonaTier {
        match self {
            Persona::None => PersonaTier::None,
            Persona::Education { level } => match level {
                EducationLevel::Graduate => PersonaTier::Graduate,
                EducationLevel::College => PersonaTier::College,
                EducationLevel::HighSchool => PersonaTier::HighSchool,
            },
            Persona::Hierarchy { role } => match role {
                HierarchyRole::Employer => PersonaTier::Employer,
                HierarchyRole::Employee => PersonaTier::Employee,
            },
            Persona::Expertise { in_domain: true, .. } => PersonaTier::InDomain,
            Persona::Expertise { in_domain: false, .. } => PersonaTier::OutOfDomain,
        }
    }
}

/// Persona category, without the domain payload. Used as a gain key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaTier {
    None,
    Graduate,
    College,
    HighSchool,
    Employer,
    Employee,
    InDomain,
    OutOfDomain,
}

impl PersonaTier {
    pub const ALL: [PersonaTier; 8] = [
        PersonaTier::None,
        PersonaTier::Graduate,
        PersonaTier::College,
        PersonaTier::HighSchool,
        PersonaTier::Employer,
        PersonaTier::Employee,
        PersonaTier::InDomain,
        PersonaTier::OutOfDomain,
    ];
}

impl fmt::Display for PersonaTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PersonaTier::None => "none",
            PersonaTier::Graduate => "graduate",
            PersonaTier::College => "college",
            PersonaTier::HighSchool => "high_school",
            PersonaTier::Employer => "employer",
            PersonaTier::Employee => "employee",
            PersonaTier::InDomain => "in_domain",
            PersonaTier::OutOfDomain => "out_of_domain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationFormat {
    Count,
    Ratio,
    List,
    Disc,
    Reason,
}

impl PresentationFormat {
    pub const ALL: [PresentationFormat; 5] = [
        PresentationFormat::Count,
        PresentationFormat::Ratio,
        PresentationFormat::List,
        PresentationFormat::Disc,
        PresentationFormat::Reason,
    ];
}

impl fmt::Display for PresentationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresentationFormat::Count => "count",
            PresentationFormat::Ratio => "ratio",
            PresentationFormat::List => "list",
            PresentationFormat::Disc => "disc",
            PresentationFormat::Reason => "reason",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationOrder {
    AgreeFirst,
    DisagreeFirst,
}

impl PresentationOrder {
    pub const ALL: [PresentationOrder; 2] =
        [PresentationOrder::AgreeFirst, PresentationOrder::DisagreeFirst];
}

impl fmt::Display for PresentationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresentationOrder::AgreeFirst => "agree_first",
            PresentationOrder::DisagreeFirst => "disagree_first",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerOpinion {
    pub agent_name: String,
    pub choice: Label,
    pub persona: Persona,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

impl PeerOpinion {
    /// The bare letter of "Agent X".
    fn letter(&self) -> &str {
        self.agent_name.strip_prefix("Agent ").unwrap_or(&self.agent_name)
    }
}

/// Peers split into those sharing the target's answer and those who do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerPanel {
    pub target_choice: Label,
    pub agreeing: Vec<PeerOpinion>,
    /// Sorted by choice label, so peers voicing the same answer are adjacent.
    pub disagreeing: Vec<PeerOpinion>,
    pub order: PresentationOrder,
}

fn agent_name(position: usize) -> String {
    let letter = Label::from_index(position)
        .map(Label::as_char)
        .expect("panels hold at most 26 peers");
    format!("Agent {letter}")
}

impl PeerPanel {
    /// A panel where every disagreeing peer may voice any label other than `own`.
    ///
    /// Used by the five-agent protocol, where the other agents' answers need
    /// not share one alternative.
    pub fn from_answers(
        own: Label,
        others: &[Label],
        order: PresentationOrder,
        persona: &Persona,
    ) -> Result<PeerPanel, InfluenceError> {
        if others.is_empty() {
            return Err(InfluenceError::Panel("no peers".into()));
        }
        if others.len() > 26 {
            return Err(InfluenceError::Panel("more than 26 peers".into()));
        }
        let agree_count = others.iter().filter(|l| **l == own).count();
        let mut alternatives: Vec<Label> = others.iter().copied().filter(|l| *l != own).collect();
        alternatives.sort();
        let make = |choice: Label| PeerOpinion {
            agent_name: String::new(),
            choice,
            persona: persona.clone(),
            reason: None,
        };
        let mut panel = PeerPanel {
            target_choice: own,
            agreeing: (0..agree_count).map(|_| make(own)).collect(),
            disagreeing: alternatives.into_iter().map(make).collect(),
            order,
        };
        panel.assign_names();
        Ok(panel)
    }

    fn assign_names(&mut self) {
        let order = self.order;
        let (first, second) = match order {
            PresentationOrder::AgreeFirst => (&mut self.agreeing, &mut self.disagreeing),
            PresentationOrder::DisagreeFirst => (&mut self.disagreeing, &mut self.agreeing),
        };
        for (i, op) in first.iter_mut().chain(second.iter_mut()).enumerate() {
            op.agent_name = agent_name(i);
        }
    }

    pub fn len(&self) -> usize {
        self.agreeing.len() + self.disagreeing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Opinions in presentation order.
    pub fn presented(&self) -> impl Iterator<Item = &PeerOpinion> {
        let (first, second) = match self.order {
            PresentationOrder::AgreeFirst => (&self.agreeing, &self.disagreeing),
            PresentationOrder::DisagreeFirst => (&self.disagreeing, &self.agreeing),
        };
        first.iter().chain(second.iter())
    }

    /// Attaches a reason to every opinion; `reason_for` is called once per opinion.
    pub fn attach_reasons<E>(
        &mut self,
        mut reason_for: impl FnMut(Label) -> Result<String, E>,
    ) -> Result<(), E> {
        for op in self.agreeing.iter_mut().chain(self.disagreeing.iter_mut()) {
            op.reason = Some(reason_for(op.choice)?);
        }
        Ok(())
    }

    fn check(&self) -> Result<(), InfluenceError> {
        if self.is_empty() {
            return Err(InfluenceError::Panel("no peers".into()));
        }
        if let Some(op) = self.agreeing.iter().find(|o| o.choice != self.target_choice) {
            return Err(InfluenceError::Panel(format!(
                "{} listed as agreeing but answers {}",
                op.agent_name, op.choice
            )));
        }
        if let Some(op) = self.disagreeing.iter().find(|o| o.choice == self.target_choice) {
            return Err(InfluenceError::Panel(format!(
                "{} listed as disagreeing but answers {}",
                op.agent_name, op.choice
            )));
        }
        Ok(())
    }
}

/// Builds the agree/disagree panel used by the format grid.
pub fn build_panel(
    original: Label,
    alternative: Label,
    n_agree: usize,
    n_disagree: usize,
    order: PresentationOrder,
    persona: &Persona,
) -> Result<PeerPanel, InfluenceError> {
    if alternative == original {
        return Err(InfluenceError::Panel(format!(
            "alternative {alternative} equals the original answer"
        )));
    }
    if n_agree + n_disagree == 0 {
        return Err(InfluenceError::Panel("no peers".into()));
    }
    let mut others = vec![original; n_agree];
    others.extend(std::iter::repeat_n(alternative, n_disagree));
    PeerPanel::from_answers(original, &others, order, persona)
}

/// Picks the label the single dyadic peer will voice.
pub fn select_peer_opinion(
    dist: &ChoiceDistribution,
    condition: PeerCondition,
    seed: u64,
) -> Result<Label, InfluenceError> {
    select_peer_opinion_with(dist, condition, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// As [`select_peer_opinion`], drawing `Random` from the given generator.
pub fn select_peer_opinion_with(
    dist: &ChoiceDistribution,
    condition: PeerCondition,
    rng: &mut impl Rng,
) -> Result<Label, InfluenceError> {
    if dist.len() < 2 && condition != PeerCondition::First {
        return Err(InfluenceError::NoAlternative { condition });
    }
    let ranked = dist.ranked();
    Ok(match condition {
        PeerCondition::First => ranked[0],
        PeerCondition::Second => ranked[1],
        PeerCondition::Last => ranked[ranked.len() - 1],
        PeerCondition::Random => dist.sample_with(rng.random::<f64>()),
    })
}

fn persona_prefix(name: &str, persona: &Persona) -> String {
    match persona {
        Persona::Education { level } => {
            format!("{name}'s highest degree is {}. ", level.phrase())
        }
        Persona::Expertise { domain, .. } => format!("{name} is an expert in {domain} domain. "),
        Persona::None | Persona::Hierarchy { .. } => String::new(),
    }
}

/// The single-peer statement used by the dyadic experiments.
pub fn render_persona(persona: &Persona, choice: Label) -> String {
    match persona {
        Persona::Hierarchy { role } => {
            let who = match role {
                HierarchyRole::Employer => "employer",
                HierarchyRole::Employee => "employee",
            };
            format!("Your {who} thinks the answer is {choice}.")
        }
        other => format!(
            "{}Agent A thinks the answer is {choice}.",
            persona_prefix("Agent A", other)
        ),
    }
}

fn join_letters(letters: &[&str]) -> String {
    match letters {
        [] => String::new(),
        [one] => one.to_string(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

/// Half-up integer percentage of `part` in `whole`.
fn percent(part: usize, whole: usize) -> usize {
    (200 * part + whole) / (2 * whole)
}

/// Groups of consecutive, same-choice opinions in presentation order.
fn blocks(panel: &PeerPanel) -> Vec<Vec<&PeerOpinion>> {
    let mut out: Vec<Vec<&PeerOpinion>> = Vec::new();
    for op in panel.presented() {
        match out.last_mut() {
            Some(block) if block[0].choice == op.choice => block.push(op),
            _ => out.push(vec![op]),
        }
    }
    out
}

/// Renders the peer-information block shown to the target agent.
pub fn render_panel(
    panel: &PeerPanel,
    format: PresentationFormat,
) -> Result<String, InfluenceError> {
    panel.check()?;
    let persona = panel.presented().next().map(|o| o.persona.tier()).unwrap_or(PersonaTier::None);
    let aggregate = matches!(
        format,
        PresentationFormat::Count | PresentationFormat::Ratio | PresentationFormat::List
    );
    if (aggregate && persona != PersonaTier::None)
        || matches!(persona, PersonaTier::Employer | PersonaTier::Employee)
    {
        return Err(InfluenceError::UnsupportedPersona { persona, format });
    }
    let total = panel.len();
    let lines: Vec<String> = match format {
        PresentationFormat::Count => blocks(panel)
            .iter()
            .map(|b| {
                let (noun, verb) = if b.len() == 1 {
                    ("agent", "thinks")
                } else {
                    ("agents", "think")
                };
                format!("{} {noun} {verb} the answer is {}.", b.len(), b[0].choice)
            })
            .collect(),
        PresentationFormat::Ratio => blocks(panel)
            .iter()
            .map(|b| {
                format!(
                    "Among {total} agents,\n{}% think the answer is {}.",
                    percent(b.len(), total),
                    b[0].choice
                )
            })
            .collect(),
        PresentationFormat::List => blocks(panel)
            .iter()
            .map(|b| {
                let letters: Vec<&str> = b.iter().map(|o| o.letter()).collect();
                format!(
                    "Agent {} think the answer is {}.",
                    join_letters(&letters),
                    b[0].choice
                )
            })
            .collect(),
        PresentationFormat::Disc => panel
            .presented()
            .map(|o| {
                format!(
                    "{}{} think the answer is {}.",
                    persona_prefix(&o.agent_name, &o.persona),
                    o.agent_name,
                    o.choice
                )
            })
            .collect(),
        PresentationFormat::Reason => panel
            .presented()
            .map(|o| {
                let reason = o
                    .reason
                    .as_deref()
                    .ok_or_else(|| InfluenceError::MissingReason {
                        agent: o.agent_name.clone(),
                    })?;
                Ok(format!(
                    "{}{} think the answer is {}, because {}.",
                    persona_prefix(&o.agent_name, &o.persona),
                    o.agent_name,
                    o.choice,
                    reason.trim().trim_end_matches('.')
                ))
            })
            .collect::<Result<_, InfluenceError>>()?,
    };
    Ok(lines.join("\n"))
}
