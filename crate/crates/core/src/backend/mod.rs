//! Black-box prediction contract `f: TensorChw -> LogitMap`.
//!
//! Built-in analytic backends (pixel-wise linear, 3x3 convolution) serve as
//! exact oracles; [`SubprocessBackend`] attaches an external model process
//! over the stdio frame protocol in [`protocol`].

mod builtin;
pub mod protocol;
mod subprocess;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{LogitMap, RasterError, TensorChw};

pub use builtin::{ConvBackend, ConvParams, LinearBackend, LinearParams};
pub use subprocess::{SubprocessBackend, DEFAULT_TIMEOUT};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: String, got: String },
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("failed to spawn backend process: {0}")]
    SpawnFailure(String),
    #[error("protocol violation: expected {expected}, got {got}")]
    ProtocolViolation { expected: String, got: String },
    #[error("backend process exited with status {0:?}")]
    ChildExit(Option<i32>),
    #[error("backend did not answer within {0:.1} s")]
    Timeout(f64),
    #[error("invalid backend parameters: {0}")]
    InvalidParameters(String),
    #[error("background needs at least one tensor")]
    EmptyBackgroundSet,
    #[error("background tensors disagree on channel count ({0} vs {1})")]
    MixedChannelCounts(usize, usize),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub(crate) fn dims3(a: usize, b: usize, c: usize) -> String {
    format!("{a}x{b}x{c}")
}

/// A deterministic dense predictor.
///
/// Implementations are called serially; callers wanting parallelism create
/// several instances.
pub trait PredictionBackend {
    fn n_class(&self) -> usize;

    /// Channel count the backend expects, if fixed.
    fn input_channels(&self) -> Option<usize>;

    fn supports_batch(&self) -> bool {
        false
    }

    fn predict(&mut self, x: &TensorChw) -> Result<LogitMap, BackendError>;

    /// Logits widened to f64, `n_class * H * W` in class-major order.
    ///
    /// Analytic backends override this to skip the f32 rounding of
    /// [`predict`](Self::predict).
    fn predict_wide(&mut self, x: &TensorChw) -> Result<Vec<f64>, BackendError> {
        let out = self.predict(x)?;
        check_output(self.n_class(), x, &out)?;
        Ok(out.data().iter().map(|&v| v as f64).collect())
    }

    fn predict_batch_wide(&mut self, xs: &[TensorChw]) -> Result<Vec<Vec<f64>>, BackendError> {
        xs.iter().map(|x| self.predict_wide(x)).collect()
    }
}

impl<B: PredictionBackend + ?Sized> PredictionBackend for Box<B> {
    fn n_class(&self) -> usize {
        (**self).n_class()
    }

    fn input_channels(&self) -> Option<usize> {
        (**self).input_channels()
    }

    fn supports_batch(&self) -> bool {
        (**self).supports_batch()
    }

    fn predict(&mut self, x: &TensorChw) -> Result<LogitMap, BackendError> {
        (**self).predict(x)
    }

    fn predict_wide(&mut self, x: &TensorChw) -> Result<Vec<f64>, BackendError> {
        (**self).predict_wide(x)
    }

    fn predict_batch_wide(&mut self, xs: &[TensorChw]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).predict_batch_wide(xs)
    }
}

pub(crate) fn check_input(expected_channels: Option<usize>, x: &TensorChw) -> Result<(), BackendError> {
    match expected_channels {
        Some(c) if c != x.channels() => Err(BackendError::DimMismatch {
            expected: format!("{c} input channels"),
            got: format!("{} channels", x.channels()),
        }),
        _ => Ok(()),
    }
}

pub(crate) fn check_output(n_class: usize, x: &TensorChw, out: &LogitMap) -> Result<(), BackendError> {
    if out.n_class() != n_class || out.height() != x.height() || out.width() != x.width() {
        return Err(BackendError::DimMismatch {
            expected: dims3(n_class, x.height(), x.width()),
            got: dims3(out.n_class(), out.height(), out.width()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Zeros,
    DatasetMean,
    UserSupplied,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Zeros => "zeros",
            Provenance::DatasetMean => "dataset-mean",
            Provenance::UserSupplied => "user-supplied",
        }
    }
}

/// Per-channel expected values used to impute absent channel groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    values: Vec<f32>,
    provenance: Provenance,
}

impl Background {
    pub fn zeros(channels: usize) -> Self {
        Self {
            values: vec![0.0; channels],
            provenance: Provenance::Zeros,
        }
    }

    pub fn user_supplied(values: Vec<f32>) -> Result<Self, BackendError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidParameters(
                "background values must be nonempty and finite".into(),
            ));
        }
        Ok(Self {
            values,
            provenance: Provenance::UserSupplied,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }
}

/// Per-channel mean over every sample and pixel (pixel-weighted).
pub fn compute_background(tensors: &[TensorChw]) -> Result<Background, BackendError> {
    let first = tensors.first().ok_or(BackendError::EmptyBackgroundSet)?;
    let channels = first.channels();
    let mut sums = vec![0.0f64; channels];
    let mut count = 0usize;
    for t in tensors {
        if t.channels() != channels {
            return Err(BackendError::MixedChannelCounts(channels, t.channels()));
        }
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += t.channel(c).iter().map(|&v| v as f64).sum::<f64>();
        }
        count += t.pixels();
    }
    Ok(Background {
        values: sums.iter().map(|s| (s / count as f64) as f32).collect(),
        provenance: Provenance::DatasetMean,
    })
}
