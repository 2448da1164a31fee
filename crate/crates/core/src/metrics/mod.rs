//! Flip rates, group metrics, confidence heatmaps and test statistics.
//!
//! Everything here is a pure function of immutable record slices; the
//! result never depends on record order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;
use crate::protocols::{GroupOutcome, TrialCondition, TrialRecord};

pub mod special;
mod stats;

pub use stats::{paired_t_test, pearson_r};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("degenerate pairing")]
    DegeneratePairing,
    #[error("question {0} has no gold label")]
    MissingGold(String),
    #[error("invalid bin count {0}")]
    Bins(usize),
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl StatResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Mean flip indicator over all (question, agent) trials.
pub fn flip_rate(records: &[TrialRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let flips = records.iter().filter(|r| r.flip).count();
    Ok(flips as f64 / records.len() as f64)
}

/// Flip rate of the five-agent protocol: total flips over total agents.
///
/// `None` when any outcome has no revision round (Original, CoT).
pub fn group_flip_rate(outcomes: &[GroupOutcome]) -> Result<Option<f64>, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut flips = 0usize;
    let mut agents = 0usize;
    for o in outcomes {
        match o.flips {
            Some(f) => flips += f as usize,
            None => return Ok(None),
        }
        agents += o.final_answers.len();
    }
    if agents == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(Some(flips as f64 / agents as f64))
}

/// Shannon entropy (natural log) of the empirical answer distribution.
pub fn answer_entropy(answers: &[Label]) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(*a).or_default() += 1;
    }
    if counts.len() == 1 {
        return 0.0;
    }
    let n = answers.len() as f64;
    -counts
        .values()
        .map(|c| {
            let p = *c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn is_unanimous(answers: &[Label]) -> bool {
    answers.windows(2).all(|w| w[0] == w[1]) && !answers.is_empty()
}

pub fn mean_entropy(outcomes: &[GroupOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(outcomes.iter().map(|o| answer_entropy(&o.final_answers)).sum::<f64>() / outcomes.len() as f64)
}

/// Fraction of questions whose final answers are all identical.
pub fn consensus_rate(outcomes: &[GroupOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let unanimous = outcomes.iter().filter(|o| is_unanimous(&o.final_answers)).count();
    Ok(unanimous as f64 / outcomes.len() as f64)
}

/// Fraction of questions answered unanimously and correctly.
///
/// Outcomes with abstentions are left out of both numerator and denominator.
pub fn group_accuracy(outcomes: &[GroupOutcome]) -> Result<f64, MetricsError> {
    let mut eligible = 0usize;
    let mut correct = 0usize;
    for o in outcomes {
        let gold = o.gold.ok_or_else(|| MetricsError::MissingGold(o.question_id.clone()))?;
        if o.abstentions > 0 {
            continue;
        }
        eligible += 1;
        if is_unanimous(&o.final_answers) && o.final_answers[0] == gold {
            correct += 1;
        }
    }
    if eligible == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(correct as f64 / eligible as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateCell {
    pub flips: usize,
    pub count: usize,
}

impl RateCell {
    pub fn rate(&self) -> Option<f64> {
        (self.count > 0).then(|| self.flips as f64 / self.count as f64)
    }

    fn record(&mut self, flip: bool) {
        self.count += 1;
        self.flips += flip as usize;
    }
}

/// Flip rate binned by self-confidence (x) and perceived confidence (y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `cells[x][y]`.
    pub cells: Vec<Vec<RateCell>>,
}

impl HeatmapGrid {
    pub fn n_bins(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, x: usize, y: usize) -> RateCell {
        self.cells[x][y]
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.count).sum()
    }
}

/// Equal-width bin over `[0, 1]`; right-open except the last bin.
pub fn bin_index(value: f64, n_bins: usize) -> usize {
    let v = value.clamp(0.0, 1.0);
    ((v * n_bins as f64).floor() as usize).min(n_bins - 1)
}

pub fn bin_heatmap(records: &[TrialRecord], n_bins: usize) -> Result<HeatmapGrid, MetricsError> {
    if n_bins < 2 {
        return Err(MetricsError::Bins(n_bins));
    }
    let edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let mut cells = vec![vec![RateCell::default(); n_bins]; n_bins];
    for r in records {
        let x = bin_index(r.self_confidence, n_bins);
        let y = bin_index(r.perceived_confidence, n_bins);
        cells[x][y].record(r.flip);
    }
    Ok(HeatmapGrid {
        x_edges: edges.clone(),
        y_edges: edges,
        cells,
    })
}

/// Flip rate per (n_agree, n_disagree) grid cell; `cells[a][d]`.
///
/// Non-grid records are ignored.
pub fn grid_cell_rates(records: &[TrialRecord], grid_max: usize) -> Vec<Vec<RateCell>> {
    let mut cells = vec![vec![RateCell::default(); grid_max + 1]; grid_max + 1];
    for r in records {
        if let TrialCondition::Grid { n_agree, n_disagree, .. } = r.condition {
            if n_agree <= grid_max && n_disagree <= grid_max {
                cells[n_agree][n_disagree].record(r.flip);
            }
        }
    }
    cells
}

/// Correlations of the flip indicator with |A^A|, |A^D| and |A^A| - |A^D|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelCorrelations {
    pub agree: StatResult,
    pub disagree: StatResult,
    pub difference: StatResult,
}

pub fn panel_correlations(records: &[TrialRecord]) -> Result<PanelCorrelations, MetricsError> {
    let mut flips = Vec::new();
    let mut agree = Vec::new();
    let mut disagree = Vec::new();
    let mut diff = Vec::new();
    for r in records {
        if let TrialCondition::Grid { n_agree, n_disagree, .. } = r.condition {
            flips.push(r.flip as u8 as f64);
            agree.push(n_agree as f64);
            disagree.push(n_disagree as f64);
            diff.push(n_agree as f64 - n_disagree as f64);
        }
    }
    Ok(PanelCorrelations {
        agree: pearson_r(&flips, &agree)?,
        disagree: pearson_r(&flips, &disagree)?,
        difference: pearson_r(&flips, &diff)?,
    })
}
