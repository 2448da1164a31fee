//! `herdsim report`: tables and heatmaps from a records file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::ValueEnum;
use herdsim_core::metrics::{bin_heatmap, grid_cell_rates, paired_t_test};
use herdsim_core::protocols::{DyadicCondition, GroupOutcome, TrialCondition, TrialRecord};
use herdsim_core::{PresentationFormat, PresentationOrder};

use crate::output::{csv_bytes, read_records, write_atomic, Record};
use crate::run::control_rows;
use crate::svg::{self, Heatmap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    FlipTable,
    Heatmap,
    GridHeatmap,
    ControlTable,
}

pub const FLIP_TABLE: &str = "flip_table.csv";
pub const HEATMAP: &str = "heatmap.svg";
pub const CONTROL_TABLE: &str = "control_table.csv";

/// Significance level for the flip-table stars.
pub const STAR_ALPHA: f64 = 0.05;

/// Conditions shown in the confidence heatmap. Only trials whose peer
/// actually disagrees are kept, since an agreeing peer cannot cause a flip.
const HEATMAP_CONDITIONS: [DyadicCondition; 3] =
    [DyadicCondition::Second, DyadicCondition::Random, DyadicCondition::Last];

pub fn grid_file(format: PresentationFormat, order: PresentationOrder) -> String {
    format!("grid_{format}_{order}.svg")
}

fn split(records: Vec<Record>) -> (Vec<TrialRecord>, Vec<GroupOutcome>) {
    let mut trials = Vec::new();
    let mut groups = Vec::new();
    for r in records {
        match r {
            Record::Trial(t) => trials.push(t),
            Record::Group(g) => groups.push(g),
        }
    }
    (trials, groups)
}

fn benchmark_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|o| o == n) {
            out.push(n.to_string());
        }
    }
    out
}

/// Writes the requested report into `out_dir` and returns the files written.
pub fn report(records_path: &Path, kind: ReportKind, out_dir: &Path, n_bins: usize) -> Result<Vec<PathBuf>> {
    let (trials, groups) = split(read_records(records_path)?);
    match kind {
        ReportKind::FlipTable => {
            let dyadic: Vec<_> = trials.into_iter().filter(|t| matches!(t.condition, TrialCondition::Dyadic { .. })).collect();
            if dyadic.is_empty() {
                bail!("flip-table needs dyadic trial records");
            }
            let path = out_dir.join(FLIP_TABLE);
            write_atomic(&path, &flip_table(&dyadic)?)?;
            Ok(vec![path])
        }
        ReportKind::Heatmap => {
            let sel: Vec<_> = trials
                .into_iter()
                .filter(|t| matches!(t.condition, TrialCondition::Dyadic { condition } if HEATMAP_CONDITIONS.contains(&condition)))
                .filter(|t| t.peer_choice != t.original.choice)
                .collect();
            if sel.is_empty() {
                bail!("heatmap needs dyadic trial records with a disagreeing peer under second, random or last");
            }
            let path = out_dir.join(HEATMAP);
            write_atomic(&path, confidence_heatmap(&sel, n_bins)?.as_bytes())?;
            Ok(vec![path])
        }
        ReportKind::GridHeatmap => {
            let grid: Vec<_> = trials.into_iter().filter(|t| matches!(t.condition, TrialCondition::Grid { .. })).collect();
            if grid.is_empty() {
                bail!("grid-heatmap needs grid trial records");
            }
            let mut written = Vec::new();
            for ((format, order), svg) in grid_heatmaps(&grid) {
                let path = out_dir.join(grid_file(format, order));
                write_atomic(&path, svg.as_bytes())?;
                written.push(path);
            }
            Ok(written)
        }
        ReportKind::ControlTable => {
            if groups.is_empty() {
                bail!("control-table needs group (control) records");
            }
            let path = out_dir.join(CONTROL_TABLE);
            write_atomic(&path, &control_table(&groups)?)?;
            Ok(vec![path])
        }
    }
}

/// Flip rate per condition (rows) and benchmark (columns), plus their average.
///
/// Within each condition group (peer, education, hierarchy, expertise) the
/// highest rate in a column is starred when a paired t-test over per-question
/// flip indicators beats every other group member at [`STAR_ALPHA`].
pub fn flip_table(trials: &[TrialRecord]) -> Result<Vec<u8>> {
    let benches = benchmark_order(trials.iter().map(|t| t.benchmark.as_str()));
    // (condition, benchmark) -> question id -> flip
    let mut flips: BTreeMap<(DyadicCondition, usize), BTreeMap<&str, f64>> = BTreeMap::new();
    for t in trials {
        if let TrialCondition::Dyadic { condition } = t.condition {
            let b = benches.iter().position(|n| *n == t.benchmark).expect("known benchmark");
            flips.entry((condition, b)).or_default().insert(&t.question_id, t.flip as u8 as f64);
        }
    }
    let rate = |q: &BTreeMap<&str, f64>| q.values().sum::<f64>() / q.len() as f64;
    let present: BTreeSet<DyadicCondition> = flips.keys().map(|(c, _)| *c).collect();
    let mut starred: BTreeSet<(DyadicCondition, usize)> = BTreeSet::new();
    for b in 0..benches.len() {
        let groups: BTreeSet<&str> = present.iter().map(|c| c.group()).collect();
        for g in groups {
            let members: Vec<DyadicCondition> =
                present.iter().copied().filter(|c| c.group() == g && flips.contains_key(&(*c, b))).collect();
            if members.len() < 2 {
                continue;
            }
            let best = *members
                .iter()
                .max_by(|x, y| rate(&flips[&(**x, b)]).total_cmp(&rate(&flips[&(**y, b)])))
                .expect("non-empty");
            let beats_all = members.iter().filter(|c| **c != best).all(|other| {
                let (w, o) = (&flips[&(best, b)], &flips[&(*other, b)]);
                let common: Vec<&&str> = w.keys().filter(|k| o.contains_key(*k)).collect();
                let a: Vec<f64> = common.iter().map(|k| w[**k]).collect();
                let c: Vec<f64> = common.iter().map(|k| o[**k]).collect();
                rate(w) > rate(o)
                    && paired_t_test(&a, &c).is_ok_and(|r| r.statistic > 0.0 && r.significant(STAR_ALPHA))
            });
            if beats_all {
                starred.insert((best, b));
            }
        }
    }
    let mut header = vec!["condition".to_string()];
    header.extend(benches.iter().cloned());
    header.push("average".into());
    let mut rows = Vec::new();
    for cond in DyadicCondition::ALL.into_iter().filter(|c| present.contains(c)) {
        let mut row = vec![cond.to_string()];
        let mut rates = Vec::new();
        for b in 0..benches.len() {
            match flips.get(&(cond, b)) {
                Some(q) => {
                    let r = rate(q);
                    rates.push(r);
                    let star = if starred.contains(&(cond, b)) { "*" } else { "" };
                    row.push(format!("{r:.4}{star}"));
                }
                None => row.push("-".into()),
            }
        }
        row.push(format!("{:.4}", rates.iter().sum::<f64>() / rates.len() as f64));
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&header_refs, &rows)
}

pub fn confidence_heatmap(trials: &[TrialRecord], n_bins: usize) -> Result<String> {
    let grid = bin_heatmap(trials, n_bins)?;
    let ticks = |edges: &[f64]| edges[..edges.len() - 1].iter().map(|e| format!("{e:.1}")).collect();
    Ok(svg::render(&Heatmap {
        title: "Flip rate by self and perceived confidence",
        x_label: "self-confidence",
        y_label: "perceived confidence",
        x_ticks: ticks(&grid.x_edges),
        y_ticks: ticks(&grid.y_edges),
        values: grid.cells.iter().map(|col| col.iter().map(|c| c.rate()).collect()).collect(),
    }))
}

/// One heatmap per (format, order) present, n_agree on x and n_disagree on y.
pub fn grid_heatmaps(trials: &[TrialRecord]) -> Vec<((PresentationFormat, PresentationOrder), String)> {
    let mut by_panel: BTreeMap<(PresentationFormat, PresentationOrder), Vec<TrialRecord>> = BTreeMap::new();
    let mut grid_max = 0;
    for t in trials {
        if let TrialCondition::Grid { format, order, n_agree, n_disagree } = t.condition {
            grid_max = grid_max.max(n_agree).max(n_disagree);
            by_panel.entry((format, order)).or_default().push(t.clone());
        }
    }
    by_panel
        .into_iter()
        .map(|((format, order), recs)| {
            let cells = grid_cell_rates(&recs, grid_max);
            let title = format!("Flip rate, {format} format, {order}");
            let ticks: Vec<String> = (0..=grid_max).map(|i| i.to_string()).collect();
            let svg = svg::render(&Heatmap {
                title: &title,
                x_label: "agreeing agents",
                y_label: "disagreeing agents",
                x_ticks: ticks.clone(),
                y_ticks: ticks,
                values: cells.iter().map(|col| col.iter().map(|c| c.rate()).collect()).collect(),
            });
            ((format, order), svg)
        })
        .collect()
}

pub const CONTROL_TABLE_HEADER: [&str; 6] =
    ["condition", "benchmark", "flip_rate", "entropy", "consensus_rate", "accuracy"];

pub fn control_table(groups: &[GroupOutcome]) -> Result<Vec<u8>> {
    let benches = benchmark_order(groups.iter().map(|g| g.benchmark.as_str()));
    // control_rows columns: condition, benchmark, questions, flip_rate, entropy, consensus, accuracy, abstentions
    let rows: Vec<Vec<String>> = control_rows(groups, &benches)?
        .into_iter()
        .map(|r| vec![r[0].clone(), r[1].clone(), r[3].clone(), r[4].clone(), r[5].clone(), r[6].clone()])
        .collect();
    csv_bytes(&CONTROL_TABLE_HEADER, &rows)
}
