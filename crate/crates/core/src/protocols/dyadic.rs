use rand::seq::IteratorRandom;

use super::{drive, DyadicCondition, ProtocolError, RunOutput, TrialCondition, TrialRecord};
use crate::agents::{original_response, revised_response, AgentError, AgentModel, PeerContext, Response};
use crate::dataset::{Benchmark, Question};
use crate::influence::{render_persona, select_peer_opinion_with, PeerPanel, Persona, PresentationOrder};
use crate::rng;

/// Two-agent study: each question is answered alone, then again after one
/// peer statement per condition.
///
/// Expertise conditions are skipped on questions without a domain tag.
pub fn run_dyadic(
    benchmark: &Benchmark,
    agent: &dyn AgentModel,
    conditions: &[DyadicCondition],
    seed: u64,
) -> Result<RunOutput<TrialRecord>, ProtocolError> {
    drive(&benchmark.questions, |q| {
        let mut out = RunOutput::default();
        let applicable: Vec<DyadicCondition> = conditions
            .iter()
            .copied()
            .filter(|c| !c.needs_domain() || q.domain.is_some())
            .collect();
        out.skipped = conditions.len() - applicable.len();
        let original = match original_response(agent, q) {
            Ok(r) => r,
            Err(e) => {
                for c in &applicable {
                    out.fail(q, c, &e);
                }
                return out;
            }
        };
        for condition in applicable {
            match trial(benchmark, agent, q, &original, condition, seed) {
                Ok(record) => out.push(record),
                Err(e) => out.fail(q, condition, e),
            }
        }
        out
    })
}

fn expertise_persona(
    benchmark: &Benchmark,
    q: &Question,
    in_domain: bool,
    seed: u64,
) -> Result<Persona, ProtocolError> {
    let own = q.domain.as_deref().ok_or_else(|| ProtocolError::Config("question has no domain".into()))?;
    if in_domain {
        return Ok(Persona::Expertise { domain: own.to_string(), in_domain: true });
    }
    let mut rng = rng::substream(seed, rng::DYADIC_DOMAIN, &q.id);
    let other = benchmark
        .domains
        .iter()
        .filter(|d| d.as_str() != own)
        .choose(&mut rng)
        .ok_or_else(|| ProtocolError::Config(format!("no domain other than {own} in {}", benchmark.name)))?;
    Ok(Persona::Expertise { domain: other.clone(), in_domain: false })
}

fn trial(
    benchmark: &Benchmark,
    agent: &dyn AgentModel,
    q: &Question,
    original: &Response,
    condition: DyadicCondition,
    seed: u64,
) -> Result<TrialRecord, ProtocolError> {
    let mut rng = rng::substream(seed, rng::DYADIC_PEER, &format!("{}/{condition}", q.id));
    let peer = select_peer_opinion_with(&original.distribution, condition.peer_condition(), &mut rng)?;
    let persona = match condition {
        DyadicCondition::InDomain => expertise_persona(benchmark, q, true, seed)?,
        DyadicCondition::OutOfDomain => expertise_persona(benchmark, q, false, seed)?,
        other => other.fixed_persona(),
    };
    let panel = PeerPanel::from_answers(original.choice, &[peer], PresentationOrder::AgreeFirst, &persona)?;
    let rendered = render_persona(&persona, peer);
    let ctx = PeerContext { panel: &panel, format: None, rendered: &rendered };
    let revised = revised_response(agent, q, ctx, None).map_err(|e: AgentError| e.at_question(&q.id))?;
    Ok(TrialRecord::new(
        q,
        &benchmark.name,
        agent.model_id(),
        TrialCondition::Dyadic { condition },
        persona,
        peer,
        original,
        rendered,
        revised,
    ))
}
