use super::{drive, ProtocolError, RunOutput, TrialCondition, TrialRecord};
use crate::agents::{original_response, revised_response, AgentModel, PeerContext, Response};
use crate::dataset::{Benchmark, Label, Question};
use crate::influence::{build_panel, render_panel, Persona, PresentationFormat, PresentationOrder};

/// Agree/disagree grid: every `(n_agree, n_disagree)` in `[0, grid_max]^2`
/// except `(0, 0)`, for each format and order.
///
/// Disagreeing peers voice the target's 2nd-ranked answer.
pub fn run_group_grid(
    benchmark: &Benchmark,
    agent: &dyn AgentModel,
    formats: &[PresentationFormat],
    orders: &[PresentationOrder],
    grid_max: usize,
) -> Result<RunOutput<TrialRecord>, ProtocolError> {
    if grid_max == 0 {
        return Err(ProtocolError::Config("grid_max must be >= 1".into()));
    }
    if grid_max > 13 {
        return Err(ProtocolError::Config("grid_max above 13 exceeds 26 named peers".into()));
    }
    let cells = (grid_max + 1) * (grid_max + 1) - 1;
    let per_question = formats.len() * orders.len() * cells;
    drive(&benchmark.questions, |q| {
        let mut out = RunOutput::default();
        match question_trials(benchmark, agent, q, formats, orders, grid_max) {
            Ok(trials) => {
                for t in trials {
                    match t {
                        Ok(record) => out.push(record),
                        Err((cell, e)) => out.fail(q, cell, e),
                    }
                }
            }
            Err(e) => {
                for _ in 0..per_question {
                    out.fail(q, "grid", &e);
                }
            }
        }
        out
    })
}

type CellResult = Result<TrialRecord, (TrialCondition, ProtocolError)>;

fn question_trials(
    benchmark: &Benchmark,
    agent: &dyn AgentModel,
    q: &Question,
    formats: &[PresentationFormat],
    orders: &[PresentationOrder],
    grid_max: usize,
) -> Result<Vec<CellResult>, ProtocolError> {
    let original = original_response(agent, q)?;
    let alternative = original.distribution.ranked()[1];
    let reasons = if formats.contains(&PresentationFormat::Reason) {
        Some((
            agent.generate_reason(q, original.choice)?,
            agent.generate_reason(q, alternative)?,
        ))
    } else {
        None
    };
    let mut out = Vec::new();
    for &format in formats {
        for &order in orders {
            for n_agree in 0..=grid_max {
                for n_disagree in 0..=grid_max {
                    if n_agree + n_disagree == 0 {
                        continue;
                    }
                    let condition = TrialCondition::Grid { format, order, n_agree, n_disagree };
                    let cell = Cell { format, order, n_agree, n_disagree, alternative };
                    out.push(
                        cell_trial(benchmark, agent, q, &original, &cell, reasons.as_ref(), condition.clone())
                            .map_err(|e| (condition, e)),
                    );
                }
            }
        }
    }
    Ok(out)
}

struct Cell {
    format: PresentationFormat,
    order: PresentationOrder,
    n_agree: usize,
    n_disagree: usize,
    alternative: Label,
}

fn cell_trial(
    benchmark: &Benchmark,
    agent: &dyn AgentModel,
    q: &Question,
    original: &Response,
    cell: &Cell,
    reasons: Option<&(String, String)>,
    condition: TrialCondition,
) -> Result<TrialRecord, ProtocolError> {
    let mut panel = build_panel(
        original.choice,
        cell.alternative,
        cell.n_agree,
        cell.n_disagree,
        cell.order,
        &Persona::None,
    )?;
    if cell.format == PresentationFormat::Reason {
        let (own, alt) = reasons.expect("reasons generated for the Reason format");
        panel.attach_reasons(|label| {
            Ok::<_, ProtocolError>(if label == original.choice { own.clone() } else { alt.clone() })
        })?;
    }
    let rendered = render_panel(&panel, cell.format)?;
    let ctx = PeerContext { panel: &panel, format: Some(cell.format), rendered: &rendered };
    let revised = revised_response(agent, q, ctx, None)?;
    let peer_choice = if cell.n_disagree > 0 { cell.alternative } else { original.choice };
    Ok(TrialRecord::new(
        q,
        &benchmark.name,
        agent.model_id(),
        condition,
        Persona::None,
        peer_choice,
        original,
        rendered,
        revised,
    ))
}
