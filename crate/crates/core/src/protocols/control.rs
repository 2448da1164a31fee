use rand::Rng;

use super::{drive, ControlCondition, GroupOutcome, ProtocolError, RunOutput};
use crate::agents::{softmax_confidence, AgentModel, AgentPrompt, CotOutcome, PeerContext};
use crate::dataset::{Benchmark, Label, Question};
use crate::influence::{
    render_panel, EducationLevel, PeerPanel, Persona, PresentationFormat, PresentationOrder,
};
use crate::rng;

pub const GROUP_SIZE: usize = 5;

/// Temperature of the initial, diversity-seeking answers.
pub const INITIAL_TEMPERATURE: f64 = 1.0;

struct Presentation {
    persona: Persona,
    format: PresentationFormat,
    order: PresentationOrder,
    system_prompt: Option<&'static str>,
}

fn presentation(condition: ControlCondition, q: &Question, seed: u64) -> Presentation {
    match condition {
        ControlCondition::StrongFactors => Presentation {
            persona: Persona::Education { level: EducationLevel::Graduate },
            format: PresentationFormat::Reason,
            order: PresentationOrder::DisagreeFirst,
            system_prompt: None,
        },
        ControlCondition::WeakFactors => Presentation {
            persona: Persona::Education { level: EducationLevel::HighSchool },
            format: PresentationFormat::Disc,
            order: PresentationOrder::AgreeFirst,
            system_prompt: None,
        },
        // Baseline and the prompt conditions: one random style per question,
        // shared by all five agents and identical across these conditions.
        _ => {
            let mut rng = rng::substream(seed, rng::CONTROL_PRESENTATION, &q.id);
            let format = PresentationFormat::ALL[rng.random_range(0..PresentationFormat::ALL.len())];
            let order = PresentationOrder::ALL[rng.random_range(0..PresentationOrder::ALL.len())];
            Presentation {
                persona: Persona::None,
                format,
                order,
                system_prompt: condition.system_prompt(),
            }
        }
    }
}

/// Draws each agent's initial answer at temperature 1 from its own substream.
fn initial_answers(
    agents: &[&dyn AgentModel],
    q: &Question,
    seed: u64,
) -> Result<Vec<Label>, ProtocolError> {
    agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let logits = agent
                .choice_logits(&AgentPrompt::question_only(q))
                .map_err(|e| e.at_question(&q.id))?;
            let dist = softmax_confidence(&logits, INITIAL_TEMPERATURE)?;
            let mut rng = rng::substream(seed, rng::CONTROL_INITIAL, &format!("{}/{i}", q.id));
            Ok(dist.sample_with(rng.random::<f64>()))
        })
        .collect()
}

/// Five-agent protocol for one condition.
///
/// Initial answers depend only on `(seed, question, agent index)`, so every
/// condition run with the same seed starts from the same answers. Revision
/// is simultaneous: each agent sees the other four initial answers and
/// answers greedily.
pub fn run_control(
    benchmark: &Benchmark,
    agents: &[&dyn AgentModel],
    condition: ControlCondition,
    seed: u64,
) -> Result<RunOutput<GroupOutcome>, ProtocolError> {
    if agents.len() != GROUP_SIZE {
        return Err(ProtocolError::Config(format!(
            "control protocol needs {GROUP_SIZE} agents, got {}",
            agents.len()
        )));
    }
    drive(&benchmark.questions, |q| {
        let mut out = RunOutput::default();
        match outcome(benchmark, agents, q, condition, seed) {
            Ok(o) => out.push(o),
            Err(e) => out.fail(q, condition, e),
        }
        out
    })
}

fn outcome(
    benchmark: &Benchmark,
    agents: &[&dyn AgentModel],
    q: &Question,
    condition: ControlCondition,
    seed: u64,
) -> Result<GroupOutcome, ProtocolError> {
    let model_id = agents[0].model_id();
    let initial = initial_answers(agents, q, seed)?;
    match condition {
        ControlCondition::Original => Ok(GroupOutcome::new(
            &q.id, &benchmark.name, model_id, condition, initial.clone(), initial, q.gold, false,
        )),
        ControlCondition::Cot => {
            let mut answers = Vec::with_capacity(GROUP_SIZE);
            let mut abstentions = 0;
            for (agent, own) in agents.iter().zip(&initial) {
                match agent.chain_of_thought(q).map_err(|e| e.at_question(&q.id))? {
                    CotOutcome::Answer(l) => answers.push(l),
                    CotOutcome::SameAsOriginal => answers.push(*own),
                    CotOutcome::Abstain => abstentions += 1,
                }
            }
            let mut o = GroupOutcome::new(
                &q.id, &benchmark.name, model_id, condition, answers.clone(), answers, q.gold, false,
            );
            o.abstentions = abstentions;
            if abstentions > 0 {
                o.accuracy = None;
            }
            Ok(o)
        }
        _ => {
            let style = presentation(condition, q, seed);
            let mut finals = Vec::with_capacity(GROUP_SIZE);
            for (i, agent) in agents.iter().enumerate() {
                let others: Vec<Label> = initial
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, l)| *l)
                    .collect();
                let mut panel = PeerPanel::from_answers(initial[i], &others, style.order, &style.persona)?;
                if style.format == PresentationFormat::Reason {
                    panel.attach_reasons(|label| agent.generate_reason(q, label))?;
                }
                let rendered = render_panel(&panel, style.format)?;
                let prompt = AgentPrompt {
                    question: q,
                    peers: Some(PeerContext { panel: &panel, format: Some(style.format), rendered: &rendered }),
                    system_prompt: style.system_prompt,
                };
                let logits = agent.choice_logits(&prompt).map_err(|e| e.at_question(&q.id))?;
                finals.push(logits.argmax());
            }
            let mut o = GroupOutcome::new(
                &q.id, &benchmark.name, model_id, condition, initial, finals, q.gold, true,
            );
            o.format = Some(style.format);
            o.order = Some(style.order);
            Ok(o)
        }
    }
}
