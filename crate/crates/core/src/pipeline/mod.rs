//! End-to-end runs driven by a manifest: predict, attribute, assign
//! references, score, and write reports and maps.

mod manifest;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{
    load_manifest, parse_manifest, resolve_manifest, BackendSpec, HistogramSpec, Instance, Manifest, Options,
    RawManifest, RunSpec, Tile,
};
pub use report::{BackgroundInfo, ClassReport, JointPoint, MccgReport, Report, RunReport, SummaryRow};
pub use run::{analyze, cmd_evaluate, cmd_explain, EvaluateOutcome, ExplainOutcome, Mode, UnitSummary};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad manifest or an input it names.
    #[error("manifest error: {0}")]
    Manifest(String),
    /// A prediction backend failed while the run was in progress.
    #[error("backend error: {0}")]
    Backend(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("output error: {0}")]
    Output(String),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Manifest(_) => 2,
            PipelineError::Backend(_) => 3,
            PipelineError::Analysis(_) | PipelineError::Output(_) => 1,
        }
    }
}

/// Command-line overrides applied on top of a manifest.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub jobs: usize,
    pub rank_by: Option<crate::shapley::RankBy>,
    pub k_policy: Option<crate::metrics::KPolicy>,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn apply(&self, m: &mut Manifest) -> Result<(), PipelineError> {
        if let Some(r) = self.rank_by {
            m.options.rank_by = r;
        }
        if let Some(k) = self.k_policy {
            if let crate::metrics::KPolicy::Fixed(k) = k {
                if k > m.groups.len() {
                    return Err(PipelineError::Manifest(format!(
                        "k={k} exceeds {} groups",
                        m.groups.len()
                    )));
                }
            }
            m.options.k_policy = k;
        }
        if let Some(out) = &self.out {
            m.output_dir = out.clone();
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        self.jobs.max(1)
    }
}
