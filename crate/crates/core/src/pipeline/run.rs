use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use serde_json::json;

use super::manifest::{load_manifest, Instance, Manifest, RunSpec};
use super::report::{
    summarize, write_histogram, write_report, write_ternary, write_text, BackgroundInfo, ClassReport, JointPoint,
    MccgReport, Report, RunReport,
};
use super::{PipelineError, Settings};
use crate::metrics::{
    accumulate_ap, band_histogram, mccg_counts, proportions, segmentation_metrics, ApStats, Histogram, RuleScore,
};
use crate::raster::{write_mask, write_pgm, write_tensor, Mask2D, Palette, TensorChw};
use crate::rules::{
    assign_references_sized, confusion_masks, rule_matches, ConfusionCounts, ReferenceAssignment, RuleContext,
};
use crate::shapley::{explain, mccg_map, rank_groups, ClassSelection, ShapleyError, MCCG_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Also writes per-unit attribution tensors and maps.
    Explain,
    /// Scores rules and segmentation; needs labels and rules.
    Evaluate,
}

/// A rectangle of one tile processed as a whole.
#[derive(Debug, Clone)]
struct Unit {
    tile: usize,
    h0: usize,
    w0: usize,
    h: usize,
    w: usize,
    name: String,
}

fn units(m: &Manifest) -> Vec<Unit> {
    let mut out = Vec::new();
    for (ti, t) in m.tiles.iter().enumerate() {
        let (th, tw) = (t.height(), t.width());
        match m.options.tile_size {
            Some(s) if th > s || tw > s => {
                for h0 in (0..th).step_by(s) {
                    for w0 in (0..tw).step_by(s) {
                        out.push(Unit {
                            tile: ti,
                            h0,
                            w0,
                            h: s.min(th - h0),
                            w: s.min(tw - w0),
                            name: format!("{}_r{h0}_c{w0}", t.id),
                        });
                    }
                }
            }
            _ => out.push(Unit {
                tile: ti,
                h0: 0,
                w0: 0,
                h: th,
                w: tw,
                name: t.id.clone(),
            }),
        }
    }
    out
}

/// Per-unit partial results; every field merges by summation.
#[derive(Debug, Clone)]
struct UnitOutput {
    confusion: Vec<ConfusionCounts>,
    last_match: Vec<ApStats>,
    independent: Vec<ApStats>,
    mccg: Vec<u64>,
    histogram: Option<Histogram>,
    residual: f64,
}

/// One line of progress per processed unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSummary {
    pub run: String,
    pub unit: String,
    pub coalitions: usize,
    pub eligible: u64,
    pub max_efficiency_residual: f64,
}

impl std::fmt::Display for UnitSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run {} tile {}: {} coalitions, {} eligible pixels, efficiency residual {:.3e}",
            self.run, self.unit, self.coalitions, self.eligible, self.max_efficiency_residual
        )
    }
}

fn analysis(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Analysis(e.to_string())
}

fn shapley_err(run: &str, unit: &str, e: ShapleyError) -> PipelineError {
    match e {
        ShapleyError::Backend(b) => PipelineError::Backend(format!("run {run}, tile {unit}: {b}")),
        other => PipelineError::Analysis(format!("run {run}, tile {unit}: {other}")),
    }
}

fn crop_mask(m: &Mask2D, u: &Unit) -> Mask2D {
    m.crop(u.h0, u.w0, u.h, u.w).expect("unit inside tile")
}

fn crop_tensor(t: &TensorChw, u: &Unit) -> TensorChw {
    t.crop(u.h0, u.w0, u.h, u.w).expect("unit inside tile")
}

fn and_masks(a: &Mask2D, b: &Mask2D) -> Mask2D {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| u8::from(x != 0 && y != 0))
        .collect();
    Mask2D::new(a.height(), a.width(), data).expect("same shape")
}

fn process_unit(
    m: &Manifest,
    run: &RunSpec,
    unit: &Unit,
    backend: &mut Instance,
    mode: Mode,
) -> Result<(UnitOutput, UnitSummary), PipelineError> {
    let tile = &m.tiles[unit.tile];
    let input = crop_tensor(&tile.input, unit);
    let valid = crop_mask(&tile.valid, unit);
    let label = tile.label.as_ref().map(|l| crop_mask(l, unit));
    let masks: HashMap<String, Mask2D> = tile
        .masks
        .iter()
        .map(|(k, v)| (k.clone(), crop_mask(v, unit)))
        .collect();
    let bands: HashMap<String, TensorChw> = tile
        .bands
        .iter()
        .map(|(k, v)| (k.clone(), crop_tensor(v, unit)))
        .collect();

    let a = explain(backend, &input, &m.groups, &m.background, &ClassSelection::All)
        .map_err(|e| shapley_err(&run.id, &unit.name, e))?;
    let pred = a.predicted_classes().map_err(analysis)?;
    let ranking = rank_groups(&a, &pred, m.options.rank_by).map_err(analysis)?;

    let mut confusion = BTreeMap::new();
    if let Some(label) = &label {
        for cls in 0..m.classes.len() {
            confusion.insert(cls, confusion_masks(label, &pred, cls, &valid).map_err(analysis)?);
        }
    }
    let coi = m.options.class_of_interest;
    let mut eligible = match confusion.get(&coi) {
        Some(c) => c.tp.clone(),
        None => {
            let data = pred
                .data()
                .iter()
                .zip(valid.data())
                .map(|(&p, &v)| u8::from(p as usize == coi && v != 0))
                .collect();
            Mask2D::new(unit.h, unit.w, data).expect("unit shape")
        }
    };
    if let Some(within) = &m.options.mccg_within {
        eligible = and_masks(&eligible, &masks[within]);
    }
    let mccg = mccg_map(&ranking, &eligible).map_err(analysis)?;
    let counts = mccg_counts(&mccg, m.groups.len()).map_err(analysis)?;
    let histogram = match &m.options.histogram {
        Some(h) => Some(band_histogram(&mccg, &bands[&h.band], h.channel, m.groups.len(), &h.edges).map_err(analysis)?),
        None => None,
    };

    let (mut last_match, mut independent) = (Vec::new(), Vec::new());
    if let (Mode::Evaluate, Some(rules)) = (mode, &m.rules) {
        let ctx = RuleContext {
            masks: masks.clone(),
            bands: bands.clone(),
            confusion: confusion.clone(),
        };
        let matches = rule_matches(rules, &ctx, unit.h, unit.w).map_err(analysis)?;
        for (ri, hits) in matches.iter().enumerate() {
            let only = ReferenceAssignment::single_rule(rules, ri, &and_masks(hits, &valid));
            let stats = accumulate_ap(&ranking, &only, m.options.k_policy).map_err(analysis)?;
            independent.push(stats[ri]);
        }
        let mut assignment = assign_references_sized(rules, &ctx, unit.h, unit.w).map_err(analysis)?;
        assignment.restrict(&valid);
        last_match = accumulate_ap(&ranking, &assignment, m.options.k_policy).map_err(analysis)?;
    }

    if mode == Mode::Explain {
        let dir = m.output_dir.join(&run.id).join(&unit.name);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::Output(format!("{}: {e}", dir.display())))?;
        let out = |e: crate::raster::RasterError| PipelineError::Output(format!("{}: {e}", dir.display()));
        for (slot, &cls) in a.classes().iter().enumerate() {
            let name = &m.classes[cls.min(m.classes.len() - 1)];
            let stem = if a.model_classes() == 1 {
                "attribution_logit".to_string()
            } else {
                format!("attribution_{name}")
            };
            write_tensor(&a.to_tensor(slot), dir.join(format!("{stem}.adgt"))).map_err(out)?;
            let sidecar = a.sidecar(slot, &m.groups, &m.background);
            write_text(
                &dir.join(format!("{stem}.json")),
                &(serde_json::to_string_pretty(&sidecar).expect("json") + "\n"),
            )?;
        }
        write_mask(&pred, dir.join("prediction.adgm")).map_err(out)?;
        write_mask(&mccg, dir.join("mccg.adgm")).map_err(out)?;
        write_pgm(
            &mccg,
            &Palette::for_groups(m.groups.len(), MCCG_SENTINEL),
            dir.join("mccg.pgm"),
        )
        .map_err(out)?;
    }

    let residual = a.max_efficiency_residual();
    let summary = UnitSummary {
        run: run.id.clone(),
        unit: unit.name.clone(),
        coalitions: 1 << m.groups.len(),
        eligible: counts.iter().sum(),
        max_efficiency_residual: residual,
    };
    debug!("{summary}");
    Ok((
        UnitOutput {
            confusion: confusion.values().map(|c| c.counts()).collect(),
            last_match,
            independent,
            mccg: counts,
            histogram,
            residual,
        },
        summary,
    ))
}

type UnitResult = Result<(UnitOutput, UnitSummary), PipelineError>;

/// Runs every (run, unit) pair on up to `jobs` worker threads. Results are
/// returned in (run, unit) order whatever the scheduling.
fn execute(
    m: &Manifest,
    units: &[Unit],
    jobs: usize,
    mode: Mode,
) -> Result<Vec<Vec<(UnitOutput, UnitSummary)>>, PipelineError> {
    let items: Vec<(usize, usize)> = (0..m.runs.len())
        .flat_map(|r| (0..units.len()).map(move |u| (r, u)))
        .collect();
    let slots: Vec<Mutex<Option<UnitResult>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = jobs.clamp(1, items.len());

    let finish_errors: Vec<PipelineError> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut instances: BTreeMap<usize, Instance> = BTreeMap::new();
                    loop {
                        if abort.load(Ordering::Relaxed) {
                            break;
                        }
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&(r, u)) = items.get(i) else { break };
                        let run = &m.runs[r];
                        let result = match instances.entry(r) {
                            std::collections::btree_map::Entry::Occupied(e) => Ok(e.into_mut()),
                            std::collections::btree_map::Entry::Vacant(e) => run
                                .backend
                                .instantiate()
                                .map(|b| e.insert(b))
                                .map_err(|e| PipelineError::Backend(format!("run {}: {e}", run.id))),
                        }
                        .and_then(|b| process_unit(m, run, &units[u], b, mode));
                        if result.is_err() {
                            abort.store(true, Ordering::Relaxed);
                        }
                        *slots[i].lock().expect("slot lock") = Some(result);
                    }
                    instances
                        .into_iter()
                        .filter_map(|(r, b)| {
                            b.finish()
                                .err()
                                .map(|e| PipelineError::Backend(format!("run {}: shutdown: {e}", m.runs[r].id)))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut per_run: Vec<Vec<(UnitOutput, UnitSummary)>> = vec![Vec::new(); m.runs.len()];
    for ((r, _), slot) in items.iter().zip(slots) {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(out)) => per_run[*r].push(out),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if let Some(e) = finish_errors.into_iter().next() {
        return Err(e);
    }
    Ok(per_run)
}

fn merge_stats(into: &mut Vec<ApStats>, from: &[ApStats]) {
    if into.is_empty() {
        into.extend_from_slice(from);
    } else {
        for (a, b) in into.iter_mut().zip(from) {
            a.merge(b);
        }
    }
}

fn aggregate(m: &Manifest, run: &RunSpec, outputs: &[(UnitOutput, UnitSummary)]) -> RunReport {
    let mut confusion = vec![ConfusionCounts::default(); m.classes.len()];
    let mut has_confusion = false;
    let (mut last, mut indep) = (Vec::new(), Vec::new());
    let mut mccg = vec![0u64; m.groups.len()];
    let mut histogram: Option<Histogram> = None;
    let mut residual = 0.0f64;
    for (o, _) in outputs {
        if !o.confusion.is_empty() {
            has_confusion = true;
            for (a, b) in confusion.iter_mut().zip(&o.confusion) {
                a.merge(b);
            }
        }
        merge_stats(&mut last, &o.last_match);
        merge_stats(&mut indep, &o.independent);
        for (a, b) in mccg.iter_mut().zip(&o.mccg) {
            *a += b;
        }
        if let Some(h) = &o.histogram {
            match histogram.as_mut() {
                Some(acc) => acc.merge(h),
                None => histogram = Some(h.clone()),
            }
        }
        residual = residual.max(o.residual);
    }

    let names: Vec<String> = m
        .rules
        .as_ref()
        .map(|r| r.rules().iter().map(|r| r.name.clone()).collect())
        .unwrap_or_default();
    let score = |stats: &[ApStats], scoring: &str| -> Vec<RuleScore> {
        names
            .iter()
            .zip(stats)
            .map(|(name, s)| {
                if s.n == 0 {
                    warn!(
                        "run {}: rule {name} ({scoring}) has no assigned pixels; reporting null",
                        run.id
                    );
                }
                RuleScore::from_stats(name, s)
            })
            .collect()
    };
    let rules = score(&last, "last match");
    let rules_independent = score(&indep, "independent");

    let classes: Vec<ClassReport> = if has_confusion {
        m.classes
            .iter()
            .zip(&confusion)
            .map(|(name, c)| ClassReport {
                class: name.clone(),
                counts: *c,
                metrics: segmentation_metrics(c).percent(),
            })
            .collect()
    } else {
        Vec::new()
    };

    let coi_name = m.classes[m.options.class_of_interest].clone();
    let iou = classes
        .get(m.options.class_of_interest)
        .and_then(|c| c.metrics.iou.value);
    let joint = [("last_match", &rules), ("independent", &rules_independent)]
        .iter()
        .flat_map(|(scoring, scores)| {
            let coi_name = coi_name.clone();
            scores.iter().map(move |s| JointPoint {
                rule: s.rule.clone(),
                scoring,
                class: coi_name.clone(),
                iou_percent: iou,
                alignment_percent: s.map_at_k_percent,
            })
        })
        .collect();

    let eligible: u64 = mccg.iter().sum();
    if eligible == 0 {
        warn!("run {}: no eligible pixels for the MCCG proportions", run.id);
    }
    RunReport {
        id: run.id.clone(),
        backend: run.backend.kind().to_string(),
        rules,
        rules_independent,
        classes,
        mccg: MccgReport {
            class: coi_name,
            within: m.options.mccg_within.clone(),
            eligible,
            proportions: proportions(&mccg).ok(),
            counts: mccg,
        },
        histogram,
        joint,
        max_efficiency_residual: residual,
    }
}

/// Runs the whole pipeline in memory. `Mode::Explain` also writes the
/// per-unit attribution artifacts under the output directory.
pub fn analyze(m: &Manifest, jobs: usize, mode: Mode) -> Result<(Report, Vec<UnitSummary>), PipelineError> {
    if mode == Mode::Evaluate {
        if m.rules.is_none() {
            return Err(PipelineError::Manifest("evaluate needs a rules entry".into()));
        }
        if let Some(t) = m.tiles.iter().find(|t| t.label.is_none()) {
            return Err(PipelineError::Manifest(format!(
                "evaluate needs a label for tile {}",
                t.id
            )));
        }
    }
    let units = units(m);
    info!(
        "{} run(s) x {} tile(s), {} groups, {} coalitions each",
        m.runs.len(),
        units.len(),
        m.groups.len(),
        1usize << m.groups.len()
    );
    let per_run = execute(m, &units, jobs, mode)?;
    let runs: Vec<RunReport> = m.runs.iter().zip(&per_run).map(|(r, o)| aggregate(m, r, o)).collect();
    let lines = per_run.into_iter().flatten().map(|(_, s)| s).collect();
    let report = Report {
        tool: "adage",
        version: env!("CARGO_PKG_VERSION"),
        groups: m.groups.names().iter().map(|s| s.to_string()).collect(),
        classes: m.classes.clone(),
        class_of_interest: m.classes[m.options.class_of_interest].clone(),
        rank_by: m.options.rank_by,
        k_policy: m.options.k_policy,
        background: BackgroundInfo {
            provenance: m.background.provenance(),
            values: m.background.values().to_vec(),
        },
        units: units.iter().map(|u| u.name.clone()).collect(),
        summary: summarize(&runs),
        runs,
    };
    Ok((report, lines))
}

fn prepare(manifest: &Path, settings: &Settings) -> Result<Manifest, PipelineError> {
    let mut m = load_manifest(manifest)?;
    settings.apply(&mut m)?;
    fs::create_dir_all(&m.output_dir).map_err(|e| PipelineError::Output(format!("{}: {e}", m.output_dir.display())))?;
    Ok(m)
}

fn write_metadata(m: &Manifest, settings: &Settings, command: &str) -> Result<(), PipelineError> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "command": command,
        "manifest": m.path.display().to_string(),
        "created_unix_secs": created,
        "jobs": settings.jobs(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_text(
        &m.output_dir.join("metadata.json"),
        &(serde_json::to_string_pretty(&meta).expect("json") + "\n"),
    )
}

#[derive(Debug)]
pub struct ExplainOutcome {
    pub output_dir: PathBuf,
    pub units: Vec<UnitSummary>,
    pub report: Report,
}

/// Attribution tensors, prediction and MCCG maps per run and tile, plus the
/// ternary and histogram CSVs.
pub fn cmd_explain(manifest: &Path, settings: &Settings) -> Result<ExplainOutcome, PipelineError> {
    let m = prepare(manifest, settings)?;
    let (report, units) = analyze(&m, settings.jobs(), Mode::Explain)?;
    write_ternary(&m.output_dir.join("ternary.csv"), &report.groups, &report.runs)?;
    write_histogram(&m.output_dir.join("histogram.csv"), &report.groups, &report.runs)?;
    write_metadata(&m, settings, "explain")?;
    Ok(ExplainOutcome {
        output_dir: m.output_dir,
        units,
        report,
    })
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub output_dir: PathBuf,
    pub report: Report,
}

/// Alignment and segmentation report as JSON and CSV.
pub fn cmd_evaluate(manifest: &Path, settings: &Settings) -> Result<EvaluateOutcome, PipelineError> {
    let m = prepare(manifest, settings)?;
    let (report, _) = analyze(&m, settings.jobs(), Mode::Evaluate)?;
    write_report(&m.output_dir, &report)?;
    write_metadata(&m, settings, "evaluate")?;
    Ok(EvaluateOutcome {
        output_dir: m.output_dir,
        report,
    })
}
