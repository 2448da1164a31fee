//! Herd-behavior simulation for multi-agent multiple-choice decisions.
//!
//! The crate is organized around the life of one experiment:
//!
//! * [`dataset`] loads and samples multiple-choice benchmarks.
//! * [`agents`] turns a question (plus optional peer information) into a
//!   choice distribution, either from a seeded synthetic model or from an
//!   external completion gateway.
//! * [`influence`] selects peer opinions and renders them as prompt text.
//! * [`protocols`] drives the dyadic, agree/disagree grid and five-agent
//!   control experiments.
//! * [`metrics`] aggregates flip rates, group metrics and test statistics.

pub mod agents;
pub mod dataset;
pub mod influence;
pub mod metrics;
pub mod protocols;
pub mod rng;

pub use agents::{
    original_response, revised_response, softmax_confidence, AgentError, AgentModel, AgentPrompt,
    ChoiceDistribution, LogitVector, PeerContext, Response, SyntheticAgent, SyntheticParams,
};
pub use dataset::{Benchmark, DatasetError, Label, Question, QuestionKind};
pub use influence::{
    EducationLevel, HierarchyRole, PeerCondition, PeerOpinion, PeerPanel, Persona, PersonaTier,
    PresentationFormat, PresentationOrder,
};
pub use metrics::{HeatmapGrid, MetricsError, StatResult};
pub use protocols::{
    ControlCondition, DyadicCondition, GroupOutcome, ProtocolError, RunOutput, TrialCondition,
    TrialRecord,
};
