//! Agent models: how a question and optional peer information become a
//! distribution over choice labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{Label, Question};
use crate::influence::{InfluenceError, PeerPanel, PresentationFormat};

pub mod gateway;
pub mod prompt;
pub mod reasons;
pub mod synthetic;

pub use gateway::{GatewayAgent, GatewayClient, GatewayLimits, MockGateway};
pub use reasons::ReasonCache;
pub use synthetic::{SyntheticAgent, SyntheticParams};

/// Probability distributions must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("logit for {label} is not finite")]
    NonFinite { label: Label },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("gateway gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("logprob extraction: {0}")]
    Extraction(String),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error("question {question_id}: {source}")]
    AtQuestion {
        question_id: String,
        #[source]
        source: Box<AgentError>,
    },
}

impl AgentError {
    pub fn at_question(self, question_id: &str) -> AgentError {
        match self {
            e @ AgentError::AtQuestion { .. } => e,
            e => AgentError::AtQuestion {
                question_id: question_id.to_string(),
                source: Box::new(e),
            },
        }
    }
}

fn label_map<S: Serializer>(values: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    let map: BTreeMap<String, f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (Label::from_index(i).expect("label range").to_string(), *v))
        .collect();
    map.serialize(serializer)
}

fn label_vec<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<f64>, D::Error> {
    let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
    let mut out = Vec::with_capacity(map.len());
    for (i, (key, value)) in map.into_iter().enumerate() {
        match Label::parse(&key) {
            Some(l) if l.index() == i => out.push(value),
            _ => {
                return Err(serde::de::Error::custom(format!(
                    "label keys must be consecutive from A, found {key:?}"
                )))
            }
        }
    }
    Ok(out)
}

/// Unnormalized per-label scores, indexed by label position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector {
    #[serde(serialize_with = "label_map", deserialize_with = "label_vec")]
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> LogitVector {
        LogitVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, label: Label) -> f64 {
        self.values[label.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn add(&mut self, label: Label, bonus: f64) {
        self.values[label.index()] += bonus;
    }

    /// Highest-scoring label, ties to the lowest label.
    pub fn argmax(&self) -> Label {
        argmax(&self.values)
    }

    pub fn shifted(&self, by: f64) -> LogitVector {
        LogitVector::new(self.values.iter().map(|v| v + by).collect())
    }
}

fn argmax(values: &[f64]) -> Label {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    Label::from_index(best).expect("label range")
}

/// A normalized probability vector over a question's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChoiceDistribution {
    #[serde(serialize_with = "label_map", deserialize_with = "label_vec")]
    probs: Vec<f64>,
}

impl ChoiceDistribution {
    pub fn new(probs: Vec<f64>) -> Result<ChoiceDistribution, AgentError> {
        if probs.is_empty() {
            return Err(AgentError::Distribution("empty".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AgentError::Distribution(format!("{probs:?} has entries outside [0,1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(AgentError::Distribution(format!("sums to {sum}")));
        }
        Ok(ChoiceDistribution { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, label: Label) -> f64 {
        self.probs[label.index()]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> {
        Label::all(self.probs.len())
    }

    pub fn argmax(&self) -> Label {
        argmax(&self.probs)
    }

    pub fn max_probability(&self) -> f64 {
        self.prob(self.argmax())
    }

    /// Labels ordered by descending probability, ties to the lower label first.
    pub fn ranked(&self) -> Vec<Label> {
        let mut labels: Vec<Label> = self.labels().collect();
        labels.sort_by(|a, b| self.prob(*b).total_cmp(&self.prob(*a)).then(a.cmp(b)));
        labels
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`.
    pub fn sample_with(&self, u: f64) -> Label {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Label::from_index(i).expect("label range");
            }
        }
        // rounding left u beyond the last cumulative sum: take the last label with mass
        let last = self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        Label::from_index(last).expect("label range")
    }
}

/// Temperature-scaled softmax over label logits.
pub fn softmax_confidence(
    logits: &LogitVector,
    temperature: f64,
) -> Result<ChoiceDistribution, AgentError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(AgentError::Temperature(temperature));
    }
    if let Some(i) = logits.values.iter().position(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite {
            label: Label::from_index(i).expect("label range"),
        });
    }
    if logits.is_empty() {
        return Err(AgentError::Distribution("no labels".into()));
    }
    let max = logits.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .values
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    ChoiceDistribution::new(exps.into_iter().map(|e| e / total).collect())
}

/// An agent's answer together with the distribution it was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub choice: Label,
    pub confidence: f64,
    pub distribution: ChoiceDistribution,
}

impl Response {
    pub fn from_distribution(distribution: ChoiceDistribution) -> Response {
        let choice = distribution.argmax();
        Response {
            choice,
            confidence: distribution.prob(choice),
            distribution,
        }
    }
}

/// Peer information shown to an agent alongside the question.
#[derive(Debug, Clone, Copy)]
pub struct PeerContext<'a> {
    pub panel: &'a PeerPanel,
    /// `None` for the dyadic persona statements, which have no panel format.
    pub format: Option<PresentationFormat>,
    pub rendered: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct AgentPrompt<'a> {
    pub question: &'a Question,
    pub peers: Option<PeerContext<'a>>,
    pub system_prompt: Option<&'a str>,
}

impl<'a> AgentPrompt<'a> {
    pub fn question_only(question: &'a Question) -> AgentPrompt<'a> {
        AgentPrompt {
            question,
            peers: None,
            system_prompt: None,
        }
    }
}

/// Result of chain-of-thought answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CotOutcome {
    Answer(Label),
    /// No parseable answer after the retry.
    Abstain,
    /// The model has no separate reasoning mode; use its plain answer.
    SameAsOriginal,
}

/// A generation distribution over choice labels.
///
/// Implementations must be deterministic: the same prompt always yields the
/// same logits.
pub trait AgentModel: Send + Sync {
    fn model_id(&self) -> &str;

    /// Temperature applied when turning logits into a reported distribution.
    fn temperature(&self) -> f64 {
        1.0
    }

    fn choice_logits(&self, prompt: &AgentPrompt<'_>) -> Result<LogitVector, AgentError>;

    /// A short justification for `choice`, used by the Reason format.
    fn generate_reason(&self, question: &Question, choice: Label) -> Result<String, AgentError>;

    fn chain_of_thought(&self, _question: &Question) -> Result<CotOutcome, AgentError> {
        Ok(CotOutcome::SameAsOriginal)
    }
}

/// The answer given from the question alone.
pub fn original_response(agent: &dyn AgentModel, q: &Question) -> Result<Response, AgentError> {
    respond(agent, &AgentPrompt::question_only(q))
}

/// The answer given after seeing peer information.
///
/// The choice is the greedy argmax; the stored distribution uses the agent's
/// temperature so confidences stay comparable with the original response.
pub fn revised_response(
    agent: &dyn AgentModel,
    q: &Question,
    peers: PeerContext<'_>,
    system_prompt: Option<&str>,
) -> Result<Response, AgentError> {
    respond(
        agent,
        &AgentPrompt {
            question: q,
            peers: Some(peers),
            system_prompt,
        },
    )
}

fn respond(agent: &dyn AgentModel, prompt: &AgentPrompt<'_>) -> Result<Response, AgentError> {
    let q = prompt.question;
    let logits = agent.choice_logits(prompt).map_err(|e| e.at_question(&q.id))?;
    if logits.len() != q.num_choices() {
        return Err(AgentError::Distribution(format!(
            "{} logits for {} choices",
            logits.len(),
            q.num_choices()
        ))
        .at_question(&q.id));
    }
    let dist = softmax_confidence(&logits, agent.temperature()).map_err(|e| e.at_question(&q.id))?;
    Ok(Response::from_distribution(dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn probs(v: &[f64]) -> Vec<f64> {
        softmax_confidence(&LogitVector::new(v.to_vec()), 1.0).unwrap().probs
    }

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        for p in probs(&[0.0; 4]) {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn hand_computed_softmax() {
        // e^2, e^1, e^0 over their sum 7.389056 + 2.718282 + 1 = 11.107338
        let p = probs(&[2.0, 1.0, 0.0]);
        assert_abs_diff_eq!(p[0], 0.66524, epsilon = 1e-5);
        assert_abs_diff_eq!(p[1], 0.24473, epsilon = 1e-5);
        assert_abs_diff_eq!(p[2], 0.09003, epsilon = 1e-5);
        let shifted = probs(&[102.0, 101.0, 100.0]);
        for (a, b) in p.iter().zip(&shifted) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn temperature_divides_logits() {
        let hot = softmax_confidence(&LogitVector::new(vec![2.0, 0.0]), 2.0).unwrap();
        let plain = softmax_confidence(&LogitVector::new(vec![1.0, 0.0]), 1.0).unwrap();
        assert_abs_diff_eq!(hot.probs[0], plain.probs[0], epsilon = 1e-15);
        assert!(softmax_confidence(&LogitVector::new(vec![1.0, 0.0]), 0.0).is_err());
    }

    #[test]
    fn non_finite_logit_rejected() {
        let err = softmax_confidence(&LogitVector::new(vec![0.0, f64::NAN]), 1.0).unwrap_err();
        assert!(matches!(err, AgentError::NonFinite { label } if label.as_char() == 'B'));
    }

    #[test]
    fn argmax_ties_go_to_lowest_label() {
        let d = ChoiceDistribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(d.argmax().as_char(), 'A');
        assert_eq!(
            d.ranked().iter().map(|l| l.as_char()).collect::<String>(),
            "ABC"
        );
        let r = Response::from_distribution(ChoiceDistribution::new(vec![0.5, 0.5]).unwrap());
        assert_eq!(r.choice.as_char(), 'A');
    }

    #[test]
    fn distribution_serializes_as_label_map() {
        let d = ChoiceDistribution::new(vec![0.5, 0.25, 0.25]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"A":0.5,"B":0.25,"C":0.25}"#);
        let back: ChoiceDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<LogitVector>(r#"{"A":1.0,"C":2.0}"#).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 2..12),
            shift in -500.0f64..500.0,
            tau in 0.05f64..5.0,
        ) {
            let lv = LogitVector::new(logits);
            let a = softmax_confidence(&lv, tau).unwrap();
            let b = softmax_confidence(&lv.shifted(shift), tau).unwrap();
            let sum: f64 = a.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
