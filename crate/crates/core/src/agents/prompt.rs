//! Chat messages sent to the gateway.

use serde::{Deserialize, Serialize};

use super::AgentPrompt;
use crate::dataset::{Label, Question};

pub const ANSWER_INSTRUCTION: &str = "Answer with only the letter of your choice.";
pub const COT_INSTRUCTION: &str =
    "Think step by step, then give your final answer as a single line: Answer: <letter>.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Message {
        Message { role: "user".into(), content: content.into() }
    }
}

/// Question text followed by one `X. choice` line per label.
pub fn render_question(q: &Question) -> String {
    let mut out = q.text.clone();
    out.push('\n');
    for (label, text) in q.labels().zip(&q.choices) {
        out.push('\n');
        out.push_str(&format!("{label}. {text}"));
    }
    out
}

fn with_system(system_prompt: Option<&str>, user: String) -> Vec<Message> {
    let mut messages = Vec::with_capacity(2);
    if let Some(s) = system_prompt {
        messages.push(Message::system(s));
    }
    messages.push(Message::user(user));
    messages
}

/// Messages asking for a single-letter answer, with peer information if any.
pub fn answer_messages(prompt: &AgentPrompt<'_>) -> Vec<Message> {
    let mut user = render_question(prompt.question);
    if let Some(peers) = &prompt.peers {
        user.push_str("\n\n");
        user.push_str(peers.rendered);
    }
    user.push_str("\n\n");
    user.push_str(ANSWER_INSTRUCTION);
    with_system(prompt.system_prompt, user)
}

pub fn cot_messages(q: &Question) -> Vec<Message> {
    with_system(None, format!("{}\n\n{COT_INSTRUCTION}", render_question(q)))
}

pub fn reason_messages(q: &Question, choice: Label) -> Vec<Message> {
    with_system(
        None,
        format!(
            "{}\n\nThe answer is {choice}. In one to three sentences, explain why {choice} is the answer.",
            render_question(q)
        ),
    )
}

/// The label on the last line of the form `Answer: X`.
pub fn parse_cot_answer(text: &str, num_labels: usize) -> Option<Label> {
    text.lines().rev().find_map(|line| {
        let rest = line.trim().strip_prefix("Answer:")?.trim();
        let rest = rest.trim_end_matches(['.', ')']).trim_start_matches('(');
        Label::parse(rest).filter(|l| l.index() < num_labels)
    })
}
