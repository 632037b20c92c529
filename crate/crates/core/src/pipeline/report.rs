use std::fs;
use std::path::Path;

use serde::Serialize;

use super::PipelineError;
use crate::backend::Provenance;
use crate::metrics::{mean_std, Histogram, KPolicy, Ratio, RuleScore, SegmentationMetrics};
use crate::rules::ConfusionCounts;
use crate::shapley::RankBy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackgroundInfo {
    pub provenance: Provenance,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub counts: ConfusionCounts,
    /// Percentages.
    pub metrics: SegmentationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MccgReport {
    pub class: String,
    pub within: Option<String>,
    pub eligible: u64,
    pub counts: Vec<u64>,
    pub proportions: Option<Vec<f64>>,
}

/// One (IoU, alignment) point for the class of interest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointPoint {
    pub rule: String,
    pub scoring: &'static str,
    pub class: String,
    pub iou_percent: Option<f64>,
    pub alignment_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub id: String,
    pub backend: String,
    /// Each pixel scored against its last matching rule.
    pub rules: Vec<RuleScore>,
    /// Each rule scored over every pixel it matches.
    pub rules_independent: Vec<RuleScore>,
    pub classes: Vec<ClassReport>,
    pub mccg: MccgReport,
    pub histogram: Option<Histogram>,
    pub joint: Vec<JointPoint>,
    pub max_efficiency_residual: f64,
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scope: &'static str,
    pub name: String,
    pub metric: &'static str,
    pub runs: usize,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub groups: Vec<String>,
    pub classes: Vec<String>,
    pub class_of_interest: String,
    pub rank_by: RankBy,
    pub k_policy: KPolicy,
    pub background: BackgroundInfo,
    pub units: Vec<String>,
    pub runs: Vec<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Vec<SummaryRow>>,
}

impl Report {
    pub fn run(&self, id: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

impl RunReport {
    pub fn rule(&self, name: &str) -> Option<&RuleScore> {
        self.rules.iter().find(|r| r.rule == name)
    }

    pub fn rule_independent(&self, name: &str) -> Option<&RuleScore> {
        self.rules_independent.iter().find(|r| r.rule == name)
    }
}

/// Cross-run dispersion; `None` for a single run.
pub(crate) fn summarize(runs: &[RunReport]) -> Option<Vec<SummaryRow>> {
    if runs.len() < 2 {
        return None;
    }
    let mut rows = Vec::new();
    let mut push = |scope: &'static str, name: &str, metric: &'static str, values: Vec<f64>| {
        let (mean, stddev) = mean_std(&values);
        rows.push(SummaryRow {
            scope,
            name: name.to_string(),
            metric,
            runs: values.len(),
            mean,
            stddev,
        });
    };
    let first = &runs[0];
    for (i, rule) in first.rules.iter().enumerate() {
        let vals = runs.iter().filter_map(|r| r.rules[i].map_at_k_percent).collect();
        push("rule", &rule.rule, "map_at_k_percent", vals);
    }
    for (i, rule) in first.rules_independent.iter().enumerate() {
        let vals = runs
            .iter()
            .filter_map(|r| r.rules_independent[i].map_at_k_percent)
            .collect();
        push("rule_independent", &rule.rule, "map_at_k_percent", vals);
    }
    type Getter = fn(&SegmentationMetrics) -> &Ratio;
    let metrics: [(&'static str, Getter); 4] = [
        ("iou_percent", |m| &m.iou),
        ("precision_percent", |m| &m.precision),
        ("recall_percent", |m| &m.recall),
        ("f1_percent", |m| &m.f1),
    ];
    for (i, class) in first.classes.iter().enumerate() {
        for (metric, get) in metrics {
            let vals = runs.iter().filter_map(|r| get(&r.classes[i].metrics).value).collect();
            push("class", &class.class, metric, vals);
        }
    }
    Some(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Output(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub(crate) fn write_ternary(path: &Path, groups: &[String], runs: &[RunReport]) -> Result<(), PipelineError> {
    let mut header = vec!["run_id".to_string()];
    header.extend(groups.iter().cloned());
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let mut row = vec![r.id.clone()];
            match &r.mccg.proportions {
                Some(p) => row.extend(p.iter().map(|v| v.to_string())),
                None => row.extend(groups.iter().map(|_| "NA".to_string())),
            }
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub(crate) fn write_histogram(path: &Path, groups: &[String], runs: &[RunReport]) -> Result<(), PipelineError> {
    let header = strings(&["run_id", "group", "bin_low", "bin_high", "count"]);
    let mut rows = Vec::new();
    for r in runs {
        let Some(h) = &r.histogram else { continue };
        for (g, counts) in h.counts.iter().enumerate() {
            for (b, c) in counts.iter().enumerate() {
                rows.push(vec![
                    r.id.clone(),
                    groups[g].clone(),
                    h.edges[b].to_string(),
                    h.edges[b + 1].to_string(),
                    c.to_string(),
                ]);
            }
        }
    }
    write_csv(path, &header, &rows)
}

fn write_rules(path: &Path, runs: &[RunReport]) -> Result<(), PipelineError> {
    let header = strings(&[
        "run_id",
        "rule",
        "scoring",
        "n",
        "map_at_k_percent",
        "ap_min",
        "ap_mean",
        "ap_max",
        "ap_stddev",
    ]);
    let mut rows = Vec::new();
    for r in runs {
        for (scoring, scores) in [("last_match", &r.rules), ("independent", &r.rules_independent)] {
            for s in scores {
                rows.push(vec![
                    r.id.clone(),
                    s.rule.clone(),
                    scoring.to_string(),
                    s.n.to_string(),
                    opt(s.map_at_k_percent),
                    opt(s.ap_min),
                    opt(s.ap_mean),
                    opt(s.ap_max),
                    opt(s.ap_stddev),
                ]);
            }
        }
    }
    write_csv(path, &header, &rows)
}

fn write_classes(path: &Path, runs: &[RunReport]) -> Result<(), PipelineError> {
    let header = strings(&[
        "run_id",
        "class",
        "tp",
        "fp",
        "fn",
        "tn",
        "iou_percent",
        "precision_percent",
        "recall_percent",
        "f1_percent",
        "undefined",
    ]);
    let mut rows = Vec::new();
    for r in runs {
        for c in &r.classes {
            let m = &c.metrics;
            let notes: Vec<String> = [
                ("iou", &m.iou),
                ("precision", &m.precision),
                ("recall", &m.recall),
                ("f1", &m.f1),
            ]
            .iter()
            .filter_map(|(name, ratio)| ratio.undefined.as_ref().map(|why| format!("{name}: {why}")))
            .collect();
            rows.push(vec![
                r.id.clone(),
                c.class.clone(),
                c.counts.tp.to_string(),
                c.counts.fp.to_string(),
                c.counts.fn_.to_string(),
                c.counts.tn.to_string(),
                opt(m.iou.value),
                opt(m.precision.value),
                opt(m.recall.value),
                opt(m.f1.value),
                notes.join("; "),
            ]);
        }
    }
    write_csv(path, &header, &rows)
}

fn write_scatter(path: &Path, runs: &[RunReport]) -> Result<(), PipelineError> {
    let header = strings(&["run_id", "rule", "scoring", "class", "iou_percent", "alignment_percent"]);
    let rows: Vec<Vec<String>> = runs
        .iter()
        .flat_map(|r| {
            r.joint.iter().map(move |j| {
                vec![
                    r.id.clone(),
                    j.rule.clone(),
                    j.scoring.to_string(),
                    j.class.clone(),
                    opt(j.iou_percent),
                    opt(j.alignment_percent),
                ]
            })
        })
        .collect();
    write_csv(path, &header, &rows)
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), PipelineError> {
    let header = strings(&["scope", "name", "metric", "runs", "mean", "stddev"]);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|s| {
            vec![
                s.scope.to_string(),
                s.name.clone(),
                s.metric.to_string(),
                s.runs.to_string(),
                opt(s.mean),
                opt(s.stddev),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| csv_err(path, e))
}

/// Writes `report.json` and the flat CSV views into `dir`.
pub(crate) fn write_report(dir: &Path, report: &Report) -> Result<(), PipelineError> {
    write_text(&dir.join("report.json"), &report.to_json())?;
    write_rules(&dir.join("rules.csv"), &report.runs)?;
    write_classes(&dir.join("classes.csv"), &report.runs)?;
    write_scatter(&dir.join("scatter.csv"), &report.runs)?;
    write_ternary(&dir.join("ternary.csv"), &report.groups, &report.runs)?;
    write_histogram(&dir.join("histogram.csv"), &report.groups, &report.runs)?;
    if let Some(rows) = &report.summary {
        write_summary(&dir.join("summary.csv"), rows)?;
    }
    Ok(())
}
