//! Run manifest: a JSON document naming every input of an explain or
//! evaluate run. Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use super::PipelineError;
use crate::backend::{
    compute_background, BackendError, Background, ConvBackend, ConvParams, LinearBackend, LinearParams,
    PredictionBackend, SubprocessBackend, DEFAULT_TIMEOUT,
};
use crate::groups::{parse_groups_config, ChannelGroupSet};
use crate::metrics::KPolicy;
use crate::raster::{read_mask, read_tensor, Mask2D, TensorChw};
use crate::rules::{parse_rules_with, RuleSet, RuleVocabulary};
use crate::shapley::RankBy;

/// Either a path to a JSON file or the JSON document inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Path(String),
    Inline(Value),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    #[serde(default)]
    pub seed: Option<u64>,
    pub groups: Source,
    #[serde(default)]
    pub rules: Option<Source>,
    pub classes: Vec<String>,
    pub tiles: Vec<RawTile>,
    pub runs: Vec<RawRun>,
    #[serde(default)]
    pub background: RawBackground,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub options: RawOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTile {
    pub id: String,
    pub input: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub valid: Option<String>,
    #[serde(default)]
    pub masks: BTreeMap<String, String>,
    #[serde(default)]
    pub bands: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRun {
    pub id: String,
    pub backend: RawBackend,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawBackend {
    Linear {
        params: Source,
    },
    Conv {
        params: Source,
    },
    Subprocess {
        argv: Vec<String>,
        n_class: usize,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawBackground {
    #[default]
    Zeros,
    /// Mean over `tensors`, or over every tile input when absent.
    DatasetMean {
        #[serde(default)]
        tensors: Option<Vec<String>>,
    },
    User {
        values: Vec<f32>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOptions {
    #[serde(default)]
    pub rank_by: Option<RankBy>,
    #[serde(default)]
    pub k_policy: Option<KPolicy>,
    #[serde(default)]
    pub class_of_interest: Option<ClassRef>,
    #[serde(default)]
    pub mccg_within: Option<String>,
    #[serde(default)]
    pub histogram: Option<RawHistogram>,
    #[serde(default)]
    pub tile_size: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHistogram {
    pub band: String,
    #[serde(default)]
    pub channel: usize,
    pub edges: Vec<f32>,
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str) -> Result<RawManifest, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::Manifest(format!("manifest: {e}")))
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub id: String,
    pub input: TensorChw,
    pub label: Option<Mask2D>,
    pub valid: Mask2D,
    pub masks: BTreeMap<String, Mask2D>,
    pub bands: BTreeMap<String, TensorChw>,
}

impl Tile {
    pub fn height(&self) -> usize {
        self.input.height()
    }

    pub fn width(&self) -> usize {
        self.input.width()
    }
}

#[derive(Debug, Clone)]
pub enum BackendSpec {
    Linear(LinearParams),
    Conv(ConvParams),
    Subprocess {
        argv: Vec<String>,
        n_class: usize,
        timeout: Duration,
    },
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Linear(_) => "linear",
            BackendSpec::Conv(_) => "conv",
            BackendSpec::Subprocess { .. } => "subprocess",
        }
    }

    pub fn n_class(&self) -> usize {
        match self {
            BackendSpec::Linear(p) => p.weights.len(),
            BackendSpec::Conv(p) => p.kernels.len(),
            BackendSpec::Subprocess { n_class, .. } => *n_class,
        }
    }

    pub fn instantiate(&self) -> Result<Instance, BackendError> {
        Ok(match self {
            BackendSpec::Linear(p) => Instance::Linear(LinearBackend::new(p)?),
            BackendSpec::Conv(p) => Instance::Conv(ConvBackend::new(p)?),
            BackendSpec::Subprocess { argv, n_class, timeout } => {
                Instance::Subprocess(SubprocessBackend::spawn(argv, *n_class, *timeout)?)
            }
        })
    }
}

/// A live backend built from a [`BackendSpec`].
#[derive(Debug)]
pub enum Instance {
    Linear(LinearBackend),
    Conv(ConvBackend),
    Subprocess(SubprocessBackend),
}

impl Instance {
    fn inner(&mut self) -> &mut dyn PredictionBackend {
        match self {
            Instance::Linear(b) => b,
            Instance::Conv(b) => b,
            Instance::Subprocess(b) => b,
        }
    }

    /// Ends an external process cleanly; it must exit with status 0.
    pub fn finish(self) -> Result<(), BackendError> {
        match self {
            Instance::Subprocess(b) => b.shutdown(),
            _ => Ok(()),
        }
    }
}

impl PredictionBackend for Instance {
    fn n_class(&self) -> usize {
        match self {
            Instance::Linear(b) => b.n_class(),
            Instance::Conv(b) => b.n_class(),
            Instance::Subprocess(b) => b.n_class(),
        }
    }

    fn input_channels(&self) -> Option<usize> {
        match self {
            Instance::Linear(b) => b.input_channels(),
            Instance::Conv(b) => b.input_channels(),
            Instance::Subprocess(b) => b.input_channels(),
        }
    }

    fn supports_batch(&self) -> bool {
        match self {
            Instance::Linear(b) => b.supports_batch(),
            Instance::Conv(b) => b.supports_batch(),
            Instance::Subprocess(b) => b.supports_batch(),
        }
    }

    fn predict(&mut self, x: &TensorChw) -> Result<crate::raster::LogitMap, BackendError> {
        self.inner().predict(x)
    }

    fn predict_wide(&mut self, x: &TensorChw) -> Result<Vec<f64>, BackendError> {
        self.inner().predict_wide(x)
    }

    fn predict_batch_wide(&mut self, xs: &[TensorChw]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.inner().predict_batch_wide(xs)
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub id: String,
    pub backend: BackendSpec,
}

#[derive(Debug, Clone)]
pub struct HistogramSpec {
    pub band: String,
    pub channel: usize,
    pub edges: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub rank_by: RankBy,
    pub k_policy: KPolicy,
    pub class_of_interest: usize,
    pub mccg_within: Option<String>,
    pub histogram: Option<HistogramSpec>,
    pub tile_size: Option<usize>,
}

/// A fully loaded and cross-checked manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub seed: Option<u64>,
    pub groups: ChannelGroupSet,
    pub rules: Option<RuleSet>,
    pub classes: Vec<String>,
    pub tiles: Vec<Tile>,
    pub runs: Vec<RunSpec>,
    pub background: Background,
    pub output_dir: PathBuf,
    pub options: Options,
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Manifest(msg.into())
}

struct Resolver<'a> {
    dir: &'a Path,
}

impl Resolver<'_> {
    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn text(&self, p: &str) -> Result<String, PipelineError> {
        let path = self.path(p);
        fs::read_to_string(&path).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    fn json_text(&self, src: &Source) -> Result<String, PipelineError> {
        match src {
            Source::Path(p) => self.text(p),
            Source::Inline(v) => Ok(v.to_string()),
        }
    }

    fn tensor(&self, p: &str) -> Result<TensorChw, PipelineError> {
        let path = self.path(p);
        read_tensor(&path).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    fn mask(&self, p: &str) -> Result<Mask2D, PipelineError> {
        let path = self.path(p);
        read_mask(&path).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Program paths containing a separator resolve like data paths; bare
    /// names are left to the `PATH` lookup.
    fn program(&self, p: &str) -> String {
        if p.contains('/') {
            self.path(p).to_string_lossy().into_owned()
        } else {
            p.to_string()
        }
    }
}

fn check_shape(what: &str, tile: &str, m: &Mask2D, h: usize, w: usize) -> Result<(), PipelineError> {
    if m.same_shape(h, w) {
        Ok(())
    } else {
        Err(bad(format!(
            "tile {tile}: {what} is {}x{}, input is {h}x{w}",
            m.height(),
            m.width()
        )))
    }
}

fn load_tile(r: &Resolver, raw: &RawTile, classes: usize) -> Result<Tile, PipelineError> {
    let input = r.tensor(&raw.input)?;
    let (h, w) = (input.height(), input.width());
    let label = match &raw.label {
        Some(p) => {
            let m = r.mask(p)?;
            check_shape("label", &raw.id, &m, h, w)?;
            m.validate_categories(classes, "label")
                .map_err(|e| bad(format!("tile {}: {e}", raw.id)))?;
            Some(m)
        }
        None => None,
    };
    let valid = match &raw.valid {
        Some(p) => {
            let m = r.mask(p)?;
            check_shape("valid mask", &raw.id, &m, h, w)?;
            m.validate_binary()
                .map_err(|e| bad(format!("tile {}: valid mask: {e}", raw.id)))?;
            m
        }
        None => Mask2D::filled(h, w, 1),
    };
    let mut masks = BTreeMap::new();
    for (id, p) in &raw.masks {
        let m = r.mask(p)?;
        check_shape(&format!("mask {id}"), &raw.id, &m, h, w)?;
        m.validate_binary()
            .map_err(|e| bad(format!("tile {}: mask {id}: {e}", raw.id)))?;
        masks.insert(id.clone(), m);
    }
    let mut bands = BTreeMap::new();
    for (id, p) in &raw.bands {
        let t = r.tensor(p)?;
        if t.height() != h || t.width() != w {
            return Err(bad(format!(
                "tile {}: band {id} is {}x{}, input is {h}x{w}",
                raw.id,
                t.height(),
                t.width()
            )));
        }
        bands.insert(id.clone(), t);
    }
    Ok(Tile {
        id: raw.id.clone(),
        input,
        label,
        valid,
        masks,
        bands,
    })
}

fn load_backend(r: &Resolver, raw: &RawBackend) -> Result<BackendSpec, PipelineError> {
    let params = |src: &Source| -> Result<String, PipelineError> { r.json_text(src) };
    Ok(match raw {
        RawBackend::Linear { params: src } => {
            let p: LinearParams =
                serde_json::from_str(&params(src)?).map_err(|e| bad(format!("linear parameters: {e}")))?;
            LinearBackend::new(&p).map_err(|e| bad(e.to_string()))?;
            BackendSpec::Linear(p)
        }
        RawBackend::Conv { params: src } => {
            let p: ConvParams =
                serde_json::from_str(&params(src)?).map_err(|e| bad(format!("conv parameters: {e}")))?;
            ConvBackend::new(&p).map_err(|e| bad(e.to_string()))?;
            BackendSpec::Conv(p)
        }
        RawBackend::Subprocess {
            argv,
            n_class,
            timeout_secs,
        } => {
            if argv.is_empty() {
                return Err(bad("subprocess backend: empty argv"));
            }
            if *n_class == 0 {
                return Err(bad("subprocess backend: n_class must be positive"));
            }
            let timeout = match timeout_secs {
                None => DEFAULT_TIMEOUT,
                Some(s) if s.is_finite() && *s > 0.0 => Duration::from_secs_f64(*s),
                Some(s) => return Err(bad(format!("subprocess backend: bad timeout {s}"))),
            };
            let mut argv = argv.clone();
            argv[0] = r.program(&argv[0]);
            BackendSpec::Subprocess {
                argv,
                n_class: *n_class,
                timeout,
            }
        }
    })
}

fn unique<'a>(what: &str, ids: impl Iterator<Item = &'a String>) -> Result<(), PipelineError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(bad(format!("empty {what} id")));
        }
        if !seen.insert(id) {
            return Err(bad(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

/// Loads the manifest at `path`, every file it names, and checks that all
/// of it fits together.
pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let raw = parse_manifest(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    resolve_manifest(raw, dir, path)
}

pub fn resolve_manifest(raw: RawManifest, dir: &Path, path: &Path) -> Result<Manifest, PipelineError> {
    let r = Resolver { dir };

    if raw.classes.len() < 2 || raw.classes.len() > 255 {
        return Err(bad("classes: expected between 2 and 255 class names"));
    }
    unique("class", raw.classes.iter())?;
    if raw.tiles.is_empty() {
        return Err(bad("tiles: at least one tile is required"));
    }
    unique("tile", raw.tiles.iter().map(|t| &t.id))?;
    if raw.runs.is_empty() {
        return Err(bad("runs: at least one run is required"));
    }
    unique("run", raw.runs.iter().map(|t| &t.id))?;

    let groups = parse_groups_config(&r.json_text(&raw.groups)?).map_err(|e| bad(format!("groups: {e}")))?;

    let tiles = raw
        .tiles
        .iter()
        .map(|t| load_tile(&r, t, raw.classes.len()))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &tiles[0];
    for t in &tiles {
        if t.input.channels() != groups.total_channels() {
            return Err(bad(format!(
                "tile {}: input has {} channels, groups cover {}",
                t.id,
                t.input.channels(),
                groups.total_channels()
            )));
        }
        if t.masks.keys().ne(first.masks.keys()) || t.bands.keys().ne(first.bands.keys()) {
            return Err(bad(format!(
                "tile {}: mask and band ids differ from tile {}",
                t.id, first.id
            )));
        }
    }

    let runs = raw
        .runs
        .iter()
        .map(|run| {
            let backend = load_backend(&r, &run.backend).map_err(|e| bad(format!("run {}: {e}", run.id)))?;
            let n = backend.n_class();
            if !(n == raw.classes.len() || (n == 1 && raw.classes.len() == 2)) {
                return Err(bad(format!(
                    "run {}: backend has {n} outputs for {} classes",
                    run.id,
                    raw.classes.len()
                )));
            }
            let expected_channels = match &backend {
                BackendSpec::Linear(p) => Some(p.weights[0].len()),
                BackendSpec::Conv(p) => Some(p.kernels[0].len()),
                BackendSpec::Subprocess { .. } => None,
            };
            if let Some(c) = expected_channels.filter(|&c| c != groups.total_channels()) {
                return Err(bad(format!(
                    "run {}: backend reads {c} channels, groups cover {}",
                    run.id,
                    groups.total_channels()
                )));
            }
            Ok(RunSpec {
                id: run.id.clone(),
                backend,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let background = match &raw.background {
        RawBackground::Zeros => Background::zeros(groups.total_channels()),
        RawBackground::DatasetMean { tensors: None } => {
            let inputs: Vec<TensorChw> = tiles.iter().map(|t| t.input.clone()).collect();
            compute_background(&inputs).map_err(|e| bad(format!("background: {e}")))?
        }
        RawBackground::DatasetMean { tensors: Some(paths) } => {
            let ts = paths.iter().map(|p| r.tensor(p)).collect::<Result<Vec<_>, _>>()?;
            compute_background(&ts).map_err(|e| bad(format!("background: {e}")))?
        }
        RawBackground::User { values } => {
            Background::user_supplied(values.clone()).map_err(|e| bad(format!("background: {e}")))?
        }
    };
    if background.channels() != groups.total_channels() {
        return Err(bad(format!(
            "background has {} channels, groups cover {}",
            background.channels(),
            groups.total_channels()
        )));
    }

    let rules = match &raw.rules {
        Some(src) => {
            let vocab = RuleVocabulary {
                class_names: raw.classes.clone(),
                class_count: Some(raw.classes.len()),
                masks: Some(first.masks.keys().cloned().collect()),
                bands: Some(first.bands.keys().cloned().collect()),
            };
            let rules =
                parse_rules_with(&r.json_text(src)?, &groups, &vocab).map_err(|e| bad(format!("rules: {e}")))?;
            for rule in rules.rules() {
                for p in &rule.conditions {
                    if let crate::rules::Predicate::BandBelow { band, channel, .. }
                    | crate::rules::Predicate::BandAtLeast { band, channel, .. } = p
                    {
                        let have = first.bands[band].channels();
                        if *channel >= have {
                            return Err(bad(format!(
                                "rules: {}: band {band} has {have} channels, channel {channel} requested",
                                rule.name
                            )));
                        }
                    }
                }
            }
            Some(rules)
        }
        None => None,
    };

    let opts = &raw.options;
    let class_of_interest = match &opts.class_of_interest {
        None => 1,
        Some(ClassRef::Index(i)) => *i,
        Some(ClassRef::Name(n)) => raw
            .classes
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| bad(format!("options.class_of_interest: unknown class {n:?}")))?,
    };
    if class_of_interest >= raw.classes.len() {
        return Err(bad(format!(
            "options.class_of_interest: {class_of_interest} out of range"
        )));
    }
    if let Some(m) = &opts.mccg_within {
        if !first.masks.contains_key(m) {
            return Err(bad(format!("options.mccg_within: unknown mask {m:?}")));
        }
    }
    let histogram = match &opts.histogram {
        Some(h) => {
            let band = first
                .bands
                .get(&h.band)
                .ok_or_else(|| bad(format!("options.histogram: unknown band {:?}", h.band)))?;
            if h.channel >= band.channels() {
                return Err(bad(format!(
                    "options.histogram: band {} has no channel {}",
                    h.band, h.channel
                )));
            }
            crate::metrics::Histogram::empty(groups.len(), &h.edges)
                .map_err(|e| bad(format!("options.histogram: {e}")))?;
            Some(HistogramSpec {
                band: h.band.clone(),
                channel: h.channel,
                edges: h.edges.clone(),
            })
        }
        None => None,
    };
    if opts.tile_size == Some(0) {
        return Err(bad("options.tile_size must be positive"));
    }
    if let KPolicy::Fixed(k) = opts.k_policy.unwrap_or_default() {
        if k > groups.len() {
            return Err(bad(format!("options.k_policy: k={k} exceeds {} groups", groups.len())));
        }
    }

    Ok(Manifest {
        path: path.to_path_buf(),
        seed: raw.seed,
        groups,
        rules,
        classes: raw.classes,
        tiles,
        runs,
        background,
        output_dir: r.path(raw.output_dir.as_deref().unwrap_or("out")),
        options: Options {
            rank_by: opts.rank_by.unwrap_or_default(),
            k_policy: opts.k_policy.unwrap_or_default(),
            class_of_interest,
            mccg_within: opts.mccg_within.clone(),
            histogram,
            tile_size: opts.tile_size,
        },
    })
}
