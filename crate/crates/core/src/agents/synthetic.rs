//! A seeded stand-in for an LLM with an additive conformity kernel.
//!
//! Each peer opinion on label `r` adds `alpha * persona_gain * format_gain`
//! to `r`'s logit; disagreeing opinions are further multiplied by
//! `order_gain` when disagreement is presented first. Agreement only ever
//! adds mass to the current argmax, so it can never cause a flip.

use std::collections::{BTreeMap, HashMap};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentModel, AgentPrompt, LogitVector};
use crate::dataset::{Label, Question};
use crate::influence::{PeerPanel, PersonaTier, PresentationFormat, PresentationOrder};
use crate::rng;

fn default_model_id() -> String {
    "synthetic".to_string()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Seed of the per-question base logits.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub temperature: f64,
    /// Standard deviation of the seeded base logits.
    #[serde(default = "one")]
    pub logit_scale: f64,
    /// Added to the gold label's base logit on factual questions.
    #[serde(default)]
    pub gold_bias: f64,
    /// Per-peer logit bonus before gains (alpha).
    pub influence_weight: f64,
    /// Missing tiers default to 1.
    #[serde(default)]
    pub persona_gains: BTreeMap<PersonaTier, f64>,
    /// Missing formats default to 1.
    #[serde(default)]
    pub format_gains: BTreeMap<PresentationFormat, f64>,
    #[serde(default = "one")]
    pub order_gain: f64,
    /// Multiplier on alpha keyed by exact system prompt text; unknown prompts count as 1.
    #[serde(default)]
    pub prompt_gains: BTreeMap<String, f64>,
}

impl SyntheticParams {
    pub fn with_influence(influence_weight: f64) -> SyntheticParams {
        SyntheticParams {
            model_id: default_model_id(),
            seed: 0,
            temperature: 1.0,
            logit_scale: 1.0,
            gold_bias: 0.0,
            influence_weight,
            persona_gains: BTreeMap::new(),
            format_gains: BTreeMap::new(),
            order_gain: 1.0,
            prompt_gains: BTreeMap::new(),
        }
    }

    /// Every violated constraint, prefixed with the field name.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be > 0, got {v}"));
            }
        };
        if !(self.influence_weight >= 0.0 && self.influence_weight.is_finite()) {
            out.push(format!(
                "influence_weight must be >= 0, got {}",
                self.influence_weight
            ));
        }
        positive("temperature", self.temperature, &mut out);
        if !(self.logit_scale >= 0.0 && self.logit_scale.is_finite()) {
            out.push(format!("logit_scale must be >= 0, got {}", self.logit_scale));
        }
        if !self.gold_bias.is_finite() {
            out.push("gold_bias must be finite".to_string());
        }
        positive("order_gain", self.order_gain, &mut out);
        for (tier, g) in &self.persona_gains {
            positive(&format!("persona_gains.{tier}"), *g, &mut out);
        }
        for (format, g) in &self.format_gains {
            positive(&format!("format_gains.{format}"), *g, &mut out);
        }
        for (prompt, g) in &self.prompt_gains {
            positive(&format!("prompt_gains[{prompt:?}]"), *g, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticAgent {
    params: SyntheticParams,
    persona_gains: BTreeMap<PersonaTier, f64>,
    format_gains: BTreeMap<PresentationFormat, f64>,
    explicit: HashMap<String, LogitVector>,
}

impl SyntheticAgent {
    pub fn new(params: SyntheticParams) -> Result<SyntheticAgent, AgentError> {
        let violations = params.violations();
        if !violations.is_empty() {
            return Err(AgentError::Config(violations.join("; ")));
        }
        let mut persona_gains: BTreeMap<_, _> = PersonaTier::ALL.iter().map(|t| (*t, 1.0)).collect();
        persona_gains.extend(params.persona_gains.iter().map(|(k, v)| (*k, *v)));
        let mut format_gains: BTreeMap<_, _> =
            PresentationFormat::ALL.iter().map(|f| (*f, 1.0)).collect();
        format_gains.extend(params.format_gains.iter().map(|(k, v)| (*k, *v)));
        Ok(SyntheticAgent {
            params,
            persona_gains,
            format_gains,
            explicit: HashMap::new(),
        })
    }

    /// Pins the base logits of one question instead of drawing them.
    pub fn with_base_logits(mut self, question_id: impl Into<String>, logits: LogitVector) -> Self {
        self.explicit.insert(question_id.into(), logits);
        self
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    pub fn influence_weight(&self) -> f64 {
        self.params.influence_weight
    }

    pub fn persona_gain(&self, tier: PersonaTier) -> Result<f64, AgentError> {
        self.persona_gains
            .get(&tier)
            .copied()
            .ok_or_else(|| AgentError::Config(format!("no gain for persona tier {tier}")))
    }

    pub fn format_gain(&self, format: PresentationFormat) -> Result<f64, AgentError> {
        self.format_gains
            .get(&format)
            .copied()
            .ok_or_else(|| AgentError::Config(format!("no gain for format {format}")))
    }

    /// Logits from the question alone.
    pub fn base_logits(&self, q: &Question) -> LogitVector {
        if let Some(explicit) = self.explicit.get(&q.id) {
            return explicit.clone();
        }
        let mut rng = rng::substream(self.params.seed, rng::SYNTHETIC_LOGITS, &q.id);
        let normal = Normal::new(0.0, self.params.logit_scale).expect("validated scale");
        let mut values: Vec<f64> = (0..q.num_choices()).map(|_| normal.sample(&mut rng)).collect();
        if let Some(gold) = q.gold {
            values[gold.index()] += self.params.gold_bias;
        }
        LogitVector::new(values)
    }

    /// Applies the additive conformity kernel for `panel` to `base`.
    ///
    /// `format` is `None` for dyadic persona statements, which carry a format gain of 1.
    pub fn conformity_update(
        &self,
        base: &LogitVector,
        panel: &PeerPanel,
        format: Option<PresentationFormat>,
        alpha: f64,
    ) -> Result<LogitVector, AgentError> {
        let format_gain = match format {
            Some(f) => self.format_gain(f)?,
            None => 1.0,
        };
        let mut out = base.clone();
        for (op, disagreeing) in panel
            .agreeing
            .iter()
            .map(|o| (o, false))
            .chain(panel.disagreeing.iter().map(|o| (o, true)))
        {
            if op.choice.index() >= out.len() {
                return Err(AgentError::Config(format!(
                    "peer answer {} outside the question's labels",
                    op.choice
                )));
            }
            let order_gain = if disagreeing && panel.order == PresentationOrder::DisagreeFirst {
                self.params.order_gain
            } else {
                1.0
            };
            let bonus = alpha * self.persona_gain(op.persona.tier())? * format_gain * order_gain;
            out.add(op.choice, bonus);
        }
        Ok(out)
    }

    fn alpha_for(&self, system_prompt: Option<&str>) -> f64 {
        let gain = system_prompt
            .and_then(|p| self.params.prompt_gains.get(p))
            .copied()
            .unwrap_or(1.0);
        self.params.influence_weight * gain
    }
}

impl AgentModel for SyntheticAgent {
    fn model_id(&self) -> &str {
        &self.params.model_id
    }

    fn temperature(&self) -> f64 {
        self.params.temperature
    }

    fn choice_logits(&self, prompt: &AgentPrompt<'_>) -> Result<LogitVector, AgentError> {
        let base = self.base_logits(prompt.question);
        match &prompt.peers {
            None => Ok(base),
            Some(ctx) => {
                self.conformity_update(&base, ctx.panel, ctx.format, self.alpha_for(prompt.system_prompt))
            }
        }
    }

    fn generate_reason(&self, _question: &Question, choice: Label) -> Result<String, AgentError> {
        Ok(format!("supports {choice} based on its reading of the question"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{original_response, revised_response, PeerContext};
    use crate::dataset::QuestionKind;
    use crate::influence::{build_panel, Persona};
    use approx::assert_abs_diff_eq;

    fn question(n: usize) -> Question {
        Question {
            id: "q".into(),
            text: "?".into(),
            choices: (0..n).map(|i| i.to_string()).collect(),
            gold: None,
            domain: None,
            kind: QuestionKind::Opinionated,
        }
    }

    fn l(c: char) -> Label {
        Label::from_char(c).unwrap()
    }

    fn agent(alpha: f64, base: &[f64]) -> SyntheticAgent {
        SyntheticAgent::new(SyntheticParams::with_influence(alpha))
            .unwrap()
            .with_base_logits("q", LogitVector::new(base.to_vec()))
    }

    #[test]
    fn original_response_from_base_logits() {
        let r = original_response(&agent(0.0, &[1.0, 0.8, 0.0]), &question(3)).unwrap();
        assert_eq!(r.choice, l('A'));
        let oracle = 1.0 / (1.0 + (-0.2f64).exp() + (-1.0f64).exp());
        assert_abs_diff_eq!(r.confidence, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(r.confidence, 0.45733, epsilon = 1e-5);
        let again = original_response(&agent(0.0, &[1.0, 0.8, 0.0]), &question(3)).unwrap();
        assert_eq!(r, again);
        let tie = original_response(&agent(0.0, &[0.0, 0.0]), &question(2)).unwrap();
        assert_eq!(tie.choice, l('A'));
    }

    #[test]
    fn one_disagreeing_peer_flips() {
        let a = agent(0.5, &[1.0, 0.8, 0.0]);
        let q = question(3);
        let panel = build_panel(l('A'), l('B'), 0, 1, PresentationOrder::AgreeFirst, &Persona::None).unwrap();
        let logits = a.conformity_update(&a.base_logits(&q), &panel, None, 0.5).unwrap();
        assert_eq!(logits.values(), &[1.0, 1.3, 0.0]);
        let ctx = PeerContext { panel: &panel, format: None, rendered: "" };
        assert_eq!(revised_response(&a, &q, ctx, None).unwrap().choice, l('B'));
    }

    #[test]
    fn agreement_and_zero_alpha_never_flip() {
        let q = question(3);
        let a = agent(10.0, &[1.0, 0.8, 0.0]);
        let panel = build_panel(l('A'), l('B'), 3, 0, PresentationOrder::AgreeFirst, &Persona::None).unwrap();
        let ctx = PeerContext { panel: &panel, format: Some(PresentationFormat::Count), rendered: "" };
        assert_eq!(revised_response(&a, &q, ctx, None).unwrap().choice, l('A'));

        let z = agent(0.0, &[1.0, 0.8, 0.0]);
        let panel = build_panel(l('A'), l('B'), 0, 5, PresentationOrder::DisagreeFirst, &Persona::None).unwrap();
        let ctx = PeerContext { panel: &panel, format: Some(PresentationFormat::Reason), rendered: "" };
        assert_eq!(
            revised_response(&z, &q, ctx, None).unwrap(),
            original_response(&z, &q).unwrap()
        );
    }

    #[test]
    fn kernel_arithmetic() {
        let a = agent(0.3, &[0.0, 0.0, 0.0]);
        let q = question(3);
        let two_disagreeing = build_panel(l('A'), l('B'), 0, 2, PresentationOrder::AgreeFirst, &Persona::None).unwrap();
        let out = a.conformity_update(&a.base_logits(&q), &two_disagreeing, None, 0.3).unwrap();
        assert_abs_diff_eq!(out.get(l('B')), 0.6, epsilon = 1e-12);

        let mut params = SyntheticParams::with_influence(0.3);
        params.order_gain = 1.2;
        let a = SyntheticAgent::new(params).unwrap();
        let mk = |order| build_panel(l('A'), l('B'), 1, 1, order, &Persona::None).unwrap();
        let base = LogitVector::new(vec![0.0; 3]);
        let agree_first = a.conformity_update(&base, &mk(PresentationOrder::AgreeFirst), None, 0.3).unwrap();
        let disagree_first = a.conformity_update(&base, &mk(PresentationOrder::DisagreeFirst), None, 0.3).unwrap();
        assert_abs_diff_eq!(disagree_first.get(l('B')) / agree_first.get(l('B')), 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(disagree_first.get(l('A')), agree_first.get(l('A')), epsilon = 1e-12);
    }

    #[test]
    fn gains_multiply() {
        let mut params = SyntheticParams::with_influence(1.0);
        params.persona_gains.insert(PersonaTier::Graduate, 2.0);
        params.format_gains.insert(PresentationFormat::Reason, 1.5);
        let a = SyntheticAgent::new(params).unwrap();
        let grad = Persona::Education { level: crate::influence::EducationLevel::Graduate };
        let panel = build_panel(l('A'), l('B'), 0, 1, PresentationOrder::AgreeFirst, &grad).unwrap();
        let out = a
            .conformity_update(&LogitVector::new(vec![0.0, 0.0]), &panel, Some(PresentationFormat::Reason), 1.0)
            .unwrap();
        assert_abs_diff_eq!(out.get(l('B')), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_params_are_listed() {
        let mut params = SyntheticParams::with_influence(-1.0);
        params.order_gain = 0.0;
        params.persona_gains.insert(PersonaTier::College, -2.0);
        let v = params.violations();
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v[0].contains("influence_weight"));
        assert!(SyntheticAgent::new(params).is_err());
    }

    #[test]
    fn unknown_tier_in_config_is_rejected() {
        let err = serde_json::from_str::<SyntheticParams>(
            r#"{"influence_weight": 1.0, "persona_gains": {"wizard": 2.0}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn seeded_logits_are_stable_per_question() {
        let mut params = SyntheticParams::with_influence(0.0);
        params.seed = 11;
        let a = SyntheticAgent::new(params.clone()).unwrap();
        let b = SyntheticAgent::new(params).unwrap();
        let q = question(4);
        assert_eq!(a.base_logits(&q), b.base_logits(&q));
        let mut other = question(4);
        other.id = "q2".into();
        assert_ne!(a.base_logits(&q), a.base_logits(&other));
    }

    #[test]
    fn synthetic_reason_template() {
        let a = agent(0.0, &[0.0, 0.0]);
        assert_eq!(
            a.generate_reason(&question(2), l('B')).unwrap(),
            "supports B based on its reading of the question"
        );
    }
}
