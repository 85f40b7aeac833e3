//! Length-generalization evaluation: roll a policy over a precomputed
//! 100-instance dataset, score exact-output success, track the best rate
//! seen, and summarize repeated trials.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use tapenet_core::dataset::EvalDataset;
use tapenet_core::machine::HeadConfig;
use tapenet_core::task::TaskKind;
use tapenet_nn::{AblationFlags, ContextSpec, ParamStore, PolicyNet, Scalar};

use crate::rollout::{run_episode, Controller, PolicyController};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub length: usize,
    /// passes / instances, exactly.
    pub rate: f64,
    pub passes: Vec<bool>,
    /// Version of the checkpoint evaluated (0 for ad-hoc parameters).
    pub checkpoint_version: u64,
}

impl EvalReport {
    pub fn pass_count(&self) -> usize {
        self.passes.iter().filter(|&&p| p).count()
    }
}

/// Evaluate with any controller; episodes reuse the controller via
/// `begin_episode`. Evaluation never mutates the dataset or parameters.
pub fn evaluate_with<S: Scalar, C: Controller<S>>(
    ctrl: &mut C,
    dataset: &EvalDataset,
    flags: AblationFlags,
    t_max_multiplier: f64,
    checkpoint_version: u64,
) -> EvalReport {
    let spec = ContextSpec::for_task(dataset.kind, HeadConfig::DEFAULT);
    let mut passes = Vec::with_capacity(dataset.instances.len());
    for instance in &dataset.instances {
        let trace = run_episode::<S, C>(ctrl, instance, &spec, flags, t_max_multiplier)
            .expect("eval dataset instance must be well-formed");
        passes.push(trace.success);
    }
    let rate = passes.iter().filter(|&&p| p).count() as f64 / passes.len().max(1) as f64;
    EvalReport {
        task: dataset.kind.name().to_string(),
        length: dataset.length,
        rate,
        passes,
        checkpoint_version,
    }
}

/// Evaluate a parameter snapshot, sampling from the policy (or acting
/// greedily when asked).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy<S: Scalar, R: Rng>(
    net: &PolicyNet,
    store: &ParamStore<S>,
    dataset: &EvalDataset,
    flags: AblationFlags,
    t_max_multiplier: f64,
    greedy: bool,
    rng: &mut R,
    checkpoint_version: u64,
) -> EvalReport {
    let mut ctrl = PolicyController::new(net, store, rng, greedy);
    evaluate_with(
        &mut ctrl,
        dataset,
        flags,
        t_max_multiplier,
        checkpoint_version,
    )
}

/// Running maximum over a series of evaluation rates.
#[derive(Debug, Clone, Copy, Default)]
pub struct BestTracker {
    best: Option<f64>,
}

impl BestTracker {
    pub fn new() -> BestTracker {
        BestTracker::default()
    }

    /// Fold in one observation; returns the best-so-far.
    pub fn observe(&mut self, rate: f64) -> f64 {
        let best = match self.best {
            Some(b) => b.max(rate),
            None => rate,
        };
        self.best = Some(best);
        best
    }

    /// None until the first observation (reported as no-data).
    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub rates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial (see `single_trial`).
    pub std_dev: f64,
    /// How many trials hit exactly 100%.
    pub perfect: usize,
    pub single_trial: bool,
}

/// Mean, sample standard deviation, and the count of trials at exactly 1.0.
pub fn summarize_trials(rates: &[f64]) -> TrialSummary {
    assert!(!rates.is_empty(), "need at least one trial");
    let n = rates.len();
    let mean = rates.iter().sum::<f64>() / n as f64;
    let std_dev = if n == 1 {
        0.0
    } else {
        (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    TrialSummary {
        rates: rates.to_vec(),
        mean,
        std_dev,
        perfect: rates.iter().filter(|&&r| r == 1.0).count(),
        single_trial: n == 1,
    }
}

impl TrialSummary {
    /// Small structured-text rendering, stable for files and logs.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# tapenet trial-summary v1\n");
        out.push_str(&format!("trials = {}\n", self.rates.len()));
        out.push_str(&format!("mean = {}\n", self.mean));
        out.push_str(&format!("std_dev = {}\n", self.std_dev));
        out.push_str(&format!("perfect = {}\n", self.perfect));
        if self.single_trial {
            out.push_str("single_trial = true\n");
        }
        let rates: Vec<String> = self.rates.iter().map(|r| r.to_string()).collect();
        out.push_str(&format!("rates = [{}]\n", rates.join(", ")));
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ReportHeaderRecord<'a> {
    r#type: &'a str,
    format: &'a str,
    version: u32,
    task: &'a str,
    length: usize,
    checkpoint_version: u64,
    passes: usize,
    total: usize,
    rate: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportInstanceRecord {
    r#type: String,
    index: usize,
    pass: bool,
}

/// Newline-delimited report file: one header record then one record per
/// instance.
pub fn write_report(report: &EvalReport, path: &Path) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    let header = ReportHeaderRecord {
        r#type: "report",
        format: "tapenet-evalreport",
        version: 1,
        task: &report.task,
        length: report.length,
        checkpoint_version: report.checkpoint_version,
        passes: report.pass_count(),
        total: report.passes.len(),
        rate: report.rate,
    };
    writeln!(f, "{}", serde_json::to_string(&header)?)?;
    for (index, &pass) in report.passes.iter().enumerate() {
        let rec = ReportInstanceRecord {
            r#type: "instance".into(),
            index,
            pass,
        };
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

/// Dataset seed convention shared by training-time evaluation and the CLI.
pub fn dataset_seed(base: u64, length: usize) -> u64 {
    base.wrapping_add(length as u64)
}

pub fn kind_from_name(name: &str) -> Option<TaskKind> {
    name.parse().ok()
}
