//! `herdsim run`: load, drive, persist.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use herdsim_core::agents::gateway::HttpTransport;
use herdsim_core::agents::{AgentModel, GatewayAgent, GatewayClient, ReasonCache, SyntheticAgent};
use herdsim_core::dataset::{filter_contentious, load_benchmark, sample_questions, Benchmark};
use herdsim_core::metrics::{consensus_rate, group_accuracy, group_flip_rate, mean_entropy};
use herdsim_core::protocols::{
    run_control, run_dyadic, run_group_grid, GroupOutcome, TrialCondition, TrialRecord, UnitError,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{self, Backend, Experiment, LoadedConfig};
use crate::output::{csv_bytes, records_to_jsonl, write_atomic, Record};

pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "records.jsonl";
pub const SUMMARY: &str = "summary.csv";

#[derive(Debug, Serialize)]
struct BenchmarkEntry {
    name: String,
    path: String,
    questions: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: Experiment,
    config_sha256: String,
    seed: u64,
    model_id: &'a str,
    benchmarks: Vec<BenchmarkEntry>,
    started_at: String,
    finished_at: String,
    units: usize,
    skipped: usize,
    error_count: usize,
    errors: Vec<UnitError>,
    notes: Vec<&'static str>,
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub records: usize,
    pub errors: usize,
}

fn build_agent(loaded: &LoadedConfig) -> Result<Box<dyn AgentModel>> {
    Ok(match &loaded.config.backend {
        Backend::Synthetic(p) => Box::new(SyntheticAgent::new(p.clone())?),
        Backend::Gateway(g) => {
            let transport = HttpTransport::from_env(Duration::from_secs(g.limits.timeout_secs))?;
            let client = Arc::new(GatewayClient::new(Arc::new(transport), g.limits.clone()));
            let cache = match &loaded.config.reason_cache {
                Some(p) => ReasonCache::open(&loaded.resolve(p))?,
                None => ReasonCache::in_memory(),
            };
            Box::new(GatewayAgent::new(g.model_id.clone(), client, Arc::new(cache)))
        }
    })
}

/// Filters to contentious questions, then samples.
fn prepare(loaded: &LoadedConfig, path: &Path, agent: &dyn AgentModel) -> Result<Benchmark> {
    let mut b = load_benchmark(path)?;
    // The sample cap applies to the raw benchmark; filtering may shrink it further.
    if let Some(n) = loaded.config.sample_size {
        let sampled = sample_questions(&b, n, loaded.config.seed)?;
        b = b.with_questions(sampled);
    }
    if let Some(t) = loaded.config.contentious_threshold {
        let kept = filter_contentious(&b, agent, t)?;
        b = b.with_questions(kept);
    }
    anyhow::ensure!(!b.is_empty(), "benchmark {} has no questions left after filtering", b.name);
    Ok(b)
}

struct Collected {
    trials: Vec<TrialRecord>,
    groups: Vec<GroupOutcome>,
    errors: Vec<UnitError>,
    units: usize,
    skipped: usize,
}

fn drive(loaded: &LoadedConfig, b: &Benchmark, agent: &dyn AgentModel, acc: &mut Collected) -> Result<()> {
    let c = &loaded.config;
    let with = |what: &str| format!("{what} on benchmark {}", b.name);
    match c.experiment {
        Experiment::Dyadic => {
            let mut out = run_dyadic(b, agent, &c.dyadic_conditions(), c.seed).with_context(|| with("dyadic run"))?;
            out.records.sort_by(|x, y| (&x.question_id, &x.condition).cmp(&(&y.question_id, &y.condition)));
            acc.units += out.units;
            acc.skipped += out.skipped;
            acc.errors.extend(out.errors);
            acc.trials.extend(out.records);
        }
        Experiment::Grid => {
            let mut out = run_group_grid(b, agent, &c.grid_formats(), &c.grid_orders(), c.grid_max)
                .with_context(|| with("grid run"))?;
            out.records.sort_by(|x, y| (&x.question_id, &x.condition).cmp(&(&y.question_id, &y.condition)));
            acc.units += out.units;
            acc.errors.extend(out.errors);
            acc.trials.extend(out.records);
        }
        Experiment::Control => {
            let agents: Vec<&dyn AgentModel> = vec![agent; herdsim_core::protocols::GROUP_SIZE];
            let mut gathered = Vec::new();
            for cond in c.control() {
                let out = run_control(b, &agents, cond, c.seed).with_context(|| with(&format!("control/{cond}")))?;
                acc.units += out.units;
                acc.errors.extend(out.errors);
                gathered.extend(out.records);
            }
            gathered.sort_by(|x, y| (&x.question_id, x.condition).cmp(&(&y.question_id, y.condition)));
            acc.groups.extend(gathered);
        }
    }
    Ok(())
}

fn rate(v: f64) -> String {
    format!("{v:.4}")
}

fn trial_summary(experiment: Experiment, trials: &[TrialRecord], bench_order: &[String]) -> Result<Vec<u8>> {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(usize, TrialCondition), (usize, usize)> = BTreeMap::new();
    for t in trials {
        let bi = bench_order.iter().position(|b| *b == t.benchmark).expect("known benchmark");
        let e = cells.entry((bi, t.condition.clone())).or_default();
        e.0 += 1;
        e.1 += t.flip as usize;
    }
    let mut rows = Vec::new();
    for ((bi, cond), (n, flips)) in &cells {
        let tail = vec![n.to_string(), flips.to_string(), rate(*flips as f64 / *n as f64)];
        let mut row = vec![bench_order[*bi].clone()];
        match cond {
            TrialCondition::Dyadic { condition } => row.push(condition.to_string()),
            TrialCondition::Grid { format, order, n_agree, n_disagree } => {
                row.extend([format.to_string(), order.to_string(), n_agree.to_string(), n_disagree.to_string()]);
            }
        }
        row.extend(tail);
        rows.push(row);
    }
    let header: &[&str] = match experiment {
        Experiment::Dyadic => &["benchmark", "condition", "trials", "flips", "flip_rate"],
        _ => &["benchmark", "format", "order", "n_agree", "n_disagree", "trials", "flips", "flip_rate"],
    };
    csv_bytes(header, &rows)
}

/// Per-(benchmark, condition) control metrics; `-` where a metric does not apply.
pub fn control_rows(groups: &[GroupOutcome], bench_order: &[String]) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for cond in herdsim_core::protocols::ControlCondition::ALL {
        for b in bench_order {
            let sel: Vec<GroupOutcome> =
                groups.iter().filter(|g| g.condition == cond && &g.benchmark == b).cloned().collect();
            if sel.is_empty() {
                continue;
            }
            let flips = group_flip_rate(&sel)?.map(rate).unwrap_or_else(|| "-".into());
            let accuracy = if sel.iter().all(|g| g.gold.is_some()) {
                group_accuracy(&sel).map(rate).unwrap_or_else(|_| "-".into())
            } else {
                "-".into()
            };
            let abstentions: u32 = sel.iter().map(|g| g.abstentions).sum();
            rows.push(vec![
                cond.to_string(),
                b.clone(),
                sel.len().to_string(),
                flips,
                rate(mean_entropy(&sel)?),
                rate(consensus_rate(&sel)?),
                accuracy,
                abstentions.to_string(),
            ]);
        }
    }
    Ok(rows)
}

pub const CONTROL_HEADER: [&str; 8] =
    ["condition", "benchmark", "questions", "flip_rate", "entropy", "consensus_rate", "accuracy", "abstentions"];

/// Runs the configured experiment. `benchmarks`, when non-empty, replaces the config's list.
pub fn run(config_path: &Path, benchmarks: &[PathBuf]) -> Result<RunReport> {
    let started = chrono::Utc::now();
    let loaded = config::load(config_path)?;
    let c = &loaded.config;
    let paths = if benchmarks.is_empty() { loaded.benchmark_paths() } else { benchmarks.to_vec() };
    let agent = build_agent(&loaded)?;
    let mut acc = Collected { trials: vec![], groups: vec![], errors: vec![], units: 0, skipped: 0 };
    let mut entries = Vec::new();
    for path in &paths {
        let b = prepare(&loaded, path, agent.as_ref())?;
        drive(&loaded, &b, agent.as_ref(), &mut acc)?;
        entries.push(BenchmarkEntry { name: b.name.clone(), path: path.display().to_string(), questions: b.len() });
    }
    let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
    let mut seen = std::collections::BTreeSet::new();
    anyhow::ensure!(names.iter().all(|n| seen.insert(n)), "benchmark names must be unique: {names:?}");

    let records: Vec<Record> = match c.experiment {
        Experiment::Control => acc.groups.iter().cloned().map(Record::Group).collect(),
        _ => acc.trials.iter().cloned().map(Record::Trial).collect(),
    };
    let summary = match c.experiment {
        Experiment::Control => csv_bytes(&CONTROL_HEADER, &control_rows(&acc.groups, &names)?)?,
        e => trial_summary(e, &acc.trials, &names)?,
    };
    let out_dir = loaded.output_dir();
    write_atomic(&out_dir.join(RECORDS), &records_to_jsonl(&records)?)?;
    write_atomic(&out_dir.join(SUMMARY), &summary)?;

    let mut notes = vec!["revised answers are greedy (temperature 0)"];
    if c.experiment == Experiment::Control {
        notes.push("revision is simultaneous: every agent sees the other four initial answers");
    }
    if c.sample_size.is_some() && c.contentious_threshold.is_some() {
        notes.push("questions were sampled before the contentious filter, so a benchmark may keep fewer than sample_size");
    }
    if !benchmarks.is_empty() {
        notes.push("benchmarks given on the command line replaced the config list");
    }
    let manifest = Manifest {
        experiment: c.experiment,
        config_sha256: hex::encode(Sha256::digest(&loaded.bytes)),
        seed: c.seed,
        model_id: c.backend.model_id(),
        benchmarks: entries,
        started_at: started.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
        units: acc.units,
        skipped: acc.skipped,
        error_count: acc.errors.len(),
        errors: acc.errors,
        notes,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&out_dir.join(MANIFEST), &bytes)?;
    Ok(RunReport { output_dir: out_dir, records: records.len(), errors: manifest.error_count })
}
