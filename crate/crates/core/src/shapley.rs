//! Exact channel-group Shapley values under expected-value imputation.
//!
//! For a group set `F` with `K` groups, the value of a coalition `S` at one
//! pixel and class is the model logit on the input whose absent groups are
//! replaced by their per-channel background means. The attribution of group
//! `k` is
//!
//! ```text
//! phi_k = sum_{S not containing k} |S|! (K - |S| - 1)! / K! * (f(S + k) - f(S))
//! ```
//!
//! [`explain`] evaluates each of the `2^K` coalitions once and scatters its
//! logits into every group with the signed weight it carries: `+w(|T| - 1)`
//! for groups in `T`, `-w(|T|)` for groups outside it.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{BackendError, Background, PredictionBackend};
use crate::groups::ChannelGroupSet;
use crate::raster::{Mask2D, TensorChw};

/// Enumeration guard: `2^20` backend calls is already a lot.
pub const MAX_GROUPS: usize = 20;
/// MCCG value of pixels outside the eligible set.
pub const MCCG_SENTINEL: u8 = 255;

#[derive(Debug, Error)]
pub enum ShapleyError {
    #[error("channel groups do not partition the input: {0}")]
    PartitionInvalid(String),
    #[error("{0} channel groups exceed the enumeration limit of {MAX_GROUPS}")]
    TooManyGroups(usize),
    #[error("coalition size {size} invalid for {groups} groups")]
    InvalidSize { size: usize, groups: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("class {0} is not among the explained classes")]
    ClassNotExplained(usize),
    #[error("class {class} out of range for a model with {n_class} classes")]
    ClassOutOfRange { class: usize, n_class: usize },
    #[error("no backend instances supplied")]
    NoBackends,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Bitmask over group indices; bit `k` set means group `k` is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(pub u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn full(groups: usize) -> Self {
        debug_assert!(groups <= MAX_GROUPS);
        Coalition(((1u64 << groups) - 1) as u32)
    }

    pub fn contains(self, group: usize) -> bool {
        self.0 & (1 << group) != 0
    }

    pub fn with(self, group: usize) -> Self {
        Coalition(self.0 | (1 << group))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// `s! (K - s - 1)! / K!`, reduced in integers before the one division.
pub fn shapley_weight(s_size: usize, groups: usize) -> Result<f64, ShapleyError> {
    if groups == 0 || groups > MAX_GROUPS || s_size >= groups {
        return Err(ShapleyError::InvalidSize { size: s_size, groups });
    }
    // 20! < 2^63, so none of these overflow.
    let num = factorial(s_size) * factorial(groups - s_size - 1);
    let den = factorial(groups);
    let d = gcd(num, den);
    Ok((num / d) as f64 / (den / d) as f64)
}

fn check_inputs(x: &TensorChw, groups: &ChannelGroupSet, bg: &Background) -> Result<(), ShapleyError> {
    if groups.total_channels() != x.channels() {
        return Err(ShapleyError::PartitionInvalid(format!(
            "group set covers {} channels, input has {}",
            groups.total_channels(),
            x.channels()
        )));
    }
    if bg.channels() != x.channels() {
        return Err(ShapleyError::DimMismatch(format!(
            "background has {} channels, input has {}",
            bg.channels(),
            x.channels()
        )));
    }
    if groups.len() > MAX_GROUPS {
        return Err(ShapleyError::TooManyGroups(groups.len()));
    }
    Ok(())
}

fn impute_into(out: &mut TensorChw, x: &TensorChw, s: Coalition, groups: &ChannelGroupSet, bg: &Background) {
    for (k, group) in groups.groups().iter().enumerate() {
        let present = s.contains(k);
        for &c in &group.members {
            let dst = out.channel_mut(c);
            if present {
                dst.copy_from_slice(x.channel(c));
            } else {
                dst.fill(bg.values()[c]);
            }
        }
    }
}

/// Input for coalition `s`: present groups copied from `x`, absent groups set
/// to their background means everywhere.
pub fn impute(
    x: &TensorChw,
    s: Coalition,
    groups: &ChannelGroupSet,
    bg: &Background,
) -> Result<TensorChw, ShapleyError> {
    check_inputs(x, groups, bg)?;
    let mut out = x.clone();
    impute_into(&mut out, x, s, groups, bg);
    Ok(out)
}

/// Which output classes to attribute.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSelection {
    #[default]
    All,
    Only(Vec<usize>),
}

impl ClassSelection {
    fn resolve(&self, n_class: usize) -> Result<Vec<usize>, ShapleyError> {
        match self {
            ClassSelection::All => Ok((0..n_class).collect()),
            ClassSelection::Only(list) => {
                let mut out: Vec<usize> = Vec::with_capacity(list.len());
                for &c in list {
                    if c >= n_class {
                        return Err(ShapleyError::ClassOutOfRange { class: c, n_class });
                    }
                    if !out.contains(&c) {
                        out.push(c);
                    }
                }
                out.sort_unstable();
                Ok(out)
            }
        }
    }
}

/// `phi[k][slot][h][w]` for the explained classes, plus the logits of the
/// full input and of the fully imputed input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    groups: usize,
    model_classes: usize,
    classes: Vec<usize>,
    height: usize,
    width: usize,
    values: Vec<f64>,
    full: Vec<f64>,
    base: Vec<f64>,
}

impl AttributionMap {
    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Number of logits the model produces.
    pub fn model_classes(&self) -> usize {
        self.model_classes
    }

    /// Explained class ids, ascending; position in this list is the slot.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slot_of(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn phi(&self, group: usize, slot: usize, h: usize, w: usize) -> f64 {
        let n = self.plane_len();
        self.values[(group * self.classes.len() + slot) * n + h * self.width + w]
    }

    /// All pixels of one (group, slot) plane, row-major.
    pub fn plane(&self, group: usize, slot: usize) -> &[f64] {
        let n = self.plane_len();
        let start = (group * self.classes.len() + slot) * n;
        &self.values[start..start + n]
    }

    /// Logit of the unmodified input at (slot, pixel).
    pub fn full_logit(&self, slot: usize, pixel: usize) -> f64 {
        self.full[slot * self.plane_len() + pixel]
    }

    /// Logit of the fully imputed input at (slot, pixel).
    pub fn base_logit(&self, slot: usize, pixel: usize) -> f64 {
        self.base[slot * self.plane_len() + pixel]
    }

    /// Predicted class per pixel from the full-input logits, with the same
    /// rule as [`crate::raster::LogitMap::predicted_classes`]. Needs every
    /// model class explained.
    pub fn predicted_classes(&self) -> Result<Mask2D, ShapleyError> {
        let slots: Vec<usize> = (0..self.model_classes)
            .map(|c| self.slot_of(c).ok_or(ShapleyError::ClassNotExplained(c)))
            .collect::<Result<_, _>>()?;
        let n = self.plane_len();
        let data = (0..n)
            .map(|p| {
                if self.model_classes == 1 {
                    return u8::from(self.full_logit(slots[0], p) > 0.0);
                }
                let mut best = 0usize;
                for cls in 1..self.model_classes {
                    if self.full_logit(slots[cls], p) > self.full_logit(slots[best], p) {
                        best = cls;
                    }
                }
                best as u8
            })
            .collect();
        Ok(Mask2D::new(self.height, self.width, data).expect("plane shape"))
    }

    /// Largest `|sum_k phi_k - (f(x) - f(x_bg))| / (1 + |f(x)|)` over all
    /// pixels and slots.
    pub fn max_efficiency_residual(&self) -> f64 {
        let n = self.plane_len();
        let mut worst = 0.0f64;
        for slot in 0..self.classes.len() {
            for p in 0..n {
                let sum: f64 = (0..self.groups).map(|k| self.plane(k, slot)[p]).sum();
                let target = self.full_logit(slot, p) - self.base_logit(slot, p);
                let r = (sum - target).abs() / (1.0 + self.full_logit(slot, p).abs());
                worst = worst.max(r);
            }
        }
        worst
    }

    /// The attributions of one slot as a `K x H x W` tensor (rounded to f32).
    pub fn to_tensor(&self, slot: usize) -> TensorChw {
        let mut data = Vec::with_capacity(self.groups * self.plane_len());
        for k in 0..self.groups {
            data.extend(self.plane(k, slot).iter().map(|&v| v as f32));
        }
        TensorChw::new(self.groups, self.height, self.width, data).expect("finite attributions")
    }

    /// Sidecar describing one per-class tensor written by [`Self::to_tensor`].
    pub fn sidecar(&self, slot: usize, groups: &ChannelGroupSet, bg: &Background) -> serde_json::Value {
        json!({
            "groups": groups.names(),
            "class": self.classes[slot],
            "background": bg.provenance().as_str(),
        })
    }
}

struct Accumulator {
    groups: usize,
    classes: Vec<usize>,
    pixels: usize,
    weight_in: Vec<f64>,
    weight_out: Vec<f64>,
    values: Vec<f64>,
    full: Option<Vec<f64>>,
    base: Option<Vec<f64>>,
}

impl Accumulator {
    fn new(
        groups: usize,
        classes: Vec<usize>,
        pixels: usize,
        fault: Option<WeightFault>,
    ) -> Result<Self, ShapleyError> {
        // weight_in[s]: coalition of size s containing the group (s >= 1).
        // weight_out[s]: coalition of size s lacking it (s <= K - 1).
        let mut weight_in = vec![0.0; groups + 1];
        let mut weight_out = vec![0.0; groups + 1];
        for s in 0..groups {
            let w = shapley_weight(s, groups)?;
            weight_in[s + 1] = w;
            weight_out[s] = w;
        }
        if let Some(f) = fault.filter(|f| f.size < groups) {
            weight_in[f.size + 1] *= f.factor;
            weight_out[f.size] *= f.factor;
        }
        let values = vec![0.0; groups * classes.len() * pixels];
        Ok(Self {
            groups,
            classes,
            pixels,
            weight_in,
            weight_out,
            values,
            full: None,
            base: None,
        })
    }

    fn add(&mut self, s: Coalition, logits: &[f64]) {
        let n = self.pixels;
        let size = s.len();
        let slots = self.classes.len();
        for k in 0..self.groups {
            let coef = if s.contains(k) {
                self.weight_in[size]
            } else {
                -self.weight_out[size]
            };
            for (slot, &cls) in self.classes.iter().enumerate() {
                let src = &logits[cls * n..(cls + 1) * n];
                let dst = &mut self.values[(k * slots + slot) * n..(k * slots + slot + 1) * n];
                for (d, &f) in dst.iter_mut().zip(src) {
                    *d += coef * f;
                }
            }
        }
        let pick = |logits: &[f64]| -> Vec<f64> {
            self.classes
                .iter()
                .flat_map(|&cls| logits[cls * n..(cls + 1) * n].iter().copied())
                .collect()
        };
        if s.len() == self.groups {
            self.full = Some(pick(logits));
        }
        if s.is_empty() {
            self.base = Some(pick(logits));
        }
    }

    fn merge(&mut self, other: Accumulator) {
        for (a, b) in self.values.iter_mut().zip(other.values) {
            *a += b;
        }
        self.full = self.full.take().or(other.full);
        self.base = self.base.take().or(other.base);
    }
}

fn run_range<B: PredictionBackend + ?Sized>(
    backend: &mut B,
    x: &TensorChw,
    groups: &ChannelGroupSet,
    bg: &Background,
    acc: &mut Accumulator,
    range: std::ops::Range<u32>,
) -> Result<(), ShapleyError> {
    let n_class = backend.n_class();
    let expected = n_class * x.pixels();
    let chunk = if backend.supports_batch() { 8 } else { 1 };
    let coalitions: Vec<Coalition> = range.map(Coalition).collect();
    let mut scratch = x.clone();
    for batch in coalitions.chunks(chunk) {
        let outputs = if chunk == 1 {
            impute_into(&mut scratch, x, batch[0], groups, bg);
            vec![backend.predict_wide(&scratch)?]
        } else {
            let inputs: Vec<TensorChw> = batch
                .iter()
                .map(|&s| {
                    let mut z = x.clone();
                    impute_into(&mut z, x, s, groups, bg);
                    z
                })
                .collect();
            backend.predict_batch_wide(&inputs)?
        };
        if outputs.len() != batch.len() {
            return Err(BackendError::BackendFailure(format!(
                "batch of {} inputs produced {} outputs",
                batch.len(),
                outputs.len()
            ))
            .into());
        }
        for (&s, logits) in batch.iter().zip(&outputs) {
            if logits.len() != expected {
                return Err(ShapleyError::DimMismatch(format!(
                    "backend returned {} logits, expected {}",
                    logits.len(),
                    expected
                )));
            }
            acc.add(s, logits);
        }
    }
    Ok(())
}

fn prepare(
    n_class: usize,
    x: &TensorChw,
    groups: &ChannelGroupSet,
    bg: &Background,
    classes: &ClassSelection,
    fault: Option<WeightFault>,
) -> Result<Accumulator, ShapleyError> {
    check_inputs(x, groups, bg)?;
    let classes = classes.resolve(n_class)?;
    Accumulator::new(groups.len(), classes, x.pixels(), fault)
}

fn finish(acc: Accumulator, n_class: usize, x: &TensorChw) -> AttributionMap {
    AttributionMap {
        groups: acc.groups,
        model_classes: n_class,
        classes: acc.classes,
        height: x.height(),
        width: x.width(),
        values: acc.values,
        full: acc.full.expect("full coalition evaluated"),
        base: acc.base.expect("empty coalition evaluated"),
    }
}

/// Exact channel-group Shapley values of `backend` at `x`.
///
/// Makes exactly `2^K` backend calls. Any backend error aborts the whole
/// computation.
pub fn explain<B: PredictionBackend + ?Sized>(
    backend: &mut B,
    x: &TensorChw,
    groups: &ChannelGroupSet,
    bg: &Background,
    classes: &ClassSelection,
) -> Result<AttributionMap, ShapleyError> {
    explain_with_fault(backend, x, groups, bg, classes, None)
}

/// Deliberate corruption of the coalition weight for one coalition size,
/// used to prove that the self-check detects a broken engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFault {
    pub size: usize,
    pub factor: f64,
}

#[doc(hidden)]
pub fn explain_with_fault<B: PredictionBackend + ?Sized>(
    backend: &mut B,
    x: &TensorChw,
    groups: &ChannelGroupSet,
    bg: &Background,
    classes: &ClassSelection,
    fault: Option<WeightFault>,
) -> Result<AttributionMap, ShapleyError> {
    let n_class = backend.n_class();
    let mut acc = prepare(n_class, x, groups, bg, classes, fault)?;
    let total = 1u32 << groups.len();
    run_range(backend, x, groups, bg, &mut acc, 0..total)?;
    Ok(finish(acc, n_class, x))
}

/// Like [`explain`], with the coalitions split into contiguous ranges across
/// several backend instances. Partial sums are merged in instance order, so
/// the result is deterministic for a fixed number of instances.
pub fn explain_parallel<B: PredictionBackend + Send>(
    backends: &mut [B],
    x: &TensorChw,
    groups: &ChannelGroupSet,
    bg: &Background,
    classes: &ClassSelection,
) -> Result<AttributionMap, ShapleyError> {
    let n_class = backends.first().ok_or(ShapleyError::NoBackends)?.n_class();
    if let Some(b) = backends.iter().find(|b| b.n_class() != n_class) {
        return Err(ShapleyError::DimMismatch(format!(
            "backend instances disagree on class count ({n_class} vs {})",
            b.n_class()
        )));
    }
    let total = 1u32 << groups.len();
    let workers = backends.len().min(total as usize);
    let per = total.div_ceil(workers as u32);

    let results: Vec<Result<Accumulator, ShapleyError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = backends[..workers]
            .iter_mut()
            .enumerate()
            .map(|(i, backend)| {
                let start = i as u32 * per;
                let end = (start + per).min(total);
                scope.spawn(move || {
                    let mut acc = prepare(n_class, x, groups, bg, classes, None)?;
                    run_range(backend, x, groups, bg, &mut acc, start..end)?;
                    Ok(acc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("explain worker panicked"))
            .collect()
    });

    let mut merged: Option<Accumulator> = None;
    for r in results {
        let acc = r?;
        match merged.as_mut() {
            None => merged = Some(acc),
            Some(m) => m.merge(acc),
        }
    }
    Ok(finish(merged.expect("at least one worker"), n_class, x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    #[default]
    Signed,
    Absolute,
}

impl std::str::FromStr for RankBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "signed" => Ok(RankBy::Signed),
            "absolute" => Ok(RankBy::Absolute),
            other => Err(format!("unknown ranking {other:?} (expected signed|absolute)")),
        }
    }
}

/// Per-pixel ordering of groups by contribution to the pixel's class.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRanking {
    groups: usize,
    height: usize,
    width: usize,
    order: Vec<u8>,
    values: Vec<f64>,
}

impl GroupRanking {
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Group indices at one pixel, most contributing first.
    pub fn at(&self, h: usize, w: usize) -> &[u8] {
        let p = h * self.width + w;
        &self.order[p * self.groups..(p + 1) * self.groups]
    }

    pub fn at_pixel(&self, p: usize) -> &[u8] {
        &self.order[p * self.groups..(p + 1) * self.groups]
    }

    /// Signed contribution values at one pixel, in group order.
    pub fn values_at_pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.groups..(p + 1) * self.groups]
    }
}

/// Orders groups by descending `key`, ties going to the lower group index.
pub fn rank_values(values: &[f64], rank_by: RankBy) -> Vec<u8> {
    let key = |i: usize| match rank_by {
        RankBy::Signed => values[i],
        RankBy::Absolute => values[i].abs(),
    };
    let mut order: Vec<u8> = (0..values.len() as u8).collect();
    order.sort_by(|&a, &b| key(b as usize).total_cmp(&key(a as usize)).then(a.cmp(&b)));
    order
}

/// Ranks groups per pixel for the class in `cls_map` at that pixel.
///
/// For a single-logit model, class 1 ranks by the attributions of the logit
/// and class 0 by their negation (evidence against class 1).
pub fn rank_groups(a: &AttributionMap, cls_map: &Mask2D, rank_by: RankBy) -> Result<GroupRanking, ShapleyError> {
    if !cls_map.same_shape(a.height, a.width) {
        return Err(ShapleyError::DimMismatch(format!(
            "class map {}x{}, attributions {}x{}",
            cls_map.height(),
            cls_map.width(),
            a.height,
            a.width
        )));
    }
    let n = a.plane_len();
    let k = a.groups;
    let mut order = Vec::with_capacity(n * k);
    let mut values = Vec::with_capacity(n * k);
    let mut buf = vec![0.0; k];
    for p in 0..n {
        let cls = cls_map.data()[p] as usize;
        let (slot, sign) = if a.model_classes == 1 {
            if cls > 1 {
                return Err(ShapleyError::ClassOutOfRange { class: cls, n_class: 2 });
            }
            let slot = a.slot_of(0).ok_or(ShapleyError::ClassNotExplained(0))?;
            (slot, if cls == 1 { 1.0 } else { -1.0 })
        } else {
            if cls >= a.model_classes {
                return Err(ShapleyError::ClassOutOfRange {
                    class: cls,
                    n_class: a.model_classes,
                });
            }
            (a.slot_of(cls).ok_or(ShapleyError::ClassNotExplained(cls))?, 1.0)
        };
        for (g, v) in buf.iter_mut().enumerate() {
            *v = sign * a.plane(g, slot)[p];
        }
        order.extend(rank_values(&buf, rank_by));
        values.extend_from_slice(&buf);
    }
    Ok(GroupRanking {
        groups: k,
        height: a.height,
        width: a.width,
        order,
        values,
    })
}

/// Most contributed channel group per eligible pixel; [`MCCG_SENTINEL`]
/// elsewhere.
pub fn mccg_map(r: &GroupRanking, eligible: &Mask2D) -> Result<Mask2D, ShapleyError> {
    if !eligible.same_shape(r.height, r.width) {
        return Err(ShapleyError::DimMismatch(format!(
            "eligible mask {}x{}, ranking {}x{}",
            eligible.height(),
            eligible.width(),
            r.height,
            r.width
        )));
    }
    let data = eligible
        .data()
        .iter()
        .enumerate()
        .map(|(p, &e)| if e != 0 { r.at_pixel(p)[0] } else { MCCG_SENTINEL })
        .collect();
    Ok(Mask2D::new(r.height, r.width, data).expect("same shape"))
}

#[cfg(test)]
pub(crate) fn ranking_from_orders(height: usize, width: usize, groups: usize, orders: &[Vec<u8>]) -> GroupRanking {
    GroupRanking {
        groups,
        height,
        width,
        order: orders.iter().flatten().copied().collect(),
        values: vec![0.0; orders.len() * groups],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ConvBackend, ConvParams, LinearBackend, LinearParams};
    use crate::groups::ChannelGroup;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn table3() -> ChannelGroupSet {
        ChannelGroupSet::new(
            6,
            vec![
                ChannelGroup::new("SAR", [0, 1]),
                ChannelGroup::new("RGB", [2, 3, 4]),
                ChannelGroup::new("NIR", [5]),
            ],
        )
        .unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> TensorChw {
        TensorChw::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Average marginal contribution over every group ordering.
    fn permutation_oracle<B: PredictionBackend>(
        b: &mut B,
        x: &TensorChw,
        g: &ChannelGroupSet,
        bg: &Background,
    ) -> Vec<f64> {
        let k = g.len();
        let mut cache: HashMap<u32, Vec<f64>> = HashMap::new();
        let mut value = |s: Coalition, b: &mut B| -> Vec<f64> {
            cache
                .entry(s.0)
                .or_insert_with(|| b.predict_wide(&impute(x, s, g, bg).unwrap()).unwrap())
                .clone()
        };
        let len = b.n_class() * x.pixels();
        let mut phi = vec![0.0; k * len];
        let mut perm: Vec<usize> = (0..k).collect();
        let mut count = 0usize;
        loop {
            let mut s = Coalition::EMPTY;
            let mut prev = value(s, b);
            for &grp in &perm {
                s = s.with(grp);
                let next = value(s, b);
                for i in 0..len {
                    phi[grp * len + i] += next[i] - prev[i];
                }
                prev = next;
            }
            count += 1;
            if !next_permutation(&mut perm) {
                break;
            }
        }
        phi.iter().map(|v| v / count as f64).collect()
    }

    fn next_permutation(p: &mut [usize]) -> bool {
        let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
            return false;
        };
        let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }

    #[test]
    fn weights_by_hand() {
        assert_eq!(shapley_weight(0, 2).unwrap(), 0.5);
        assert_eq!(shapley_weight(1, 3).unwrap(), 1.0 / 6.0);
        assert_eq!(shapley_weight(0, 1).unwrap(), 1.0);
        assert!(matches!(shapley_weight(3, 3), Err(ShapleyError::InvalidSize { .. })));
        assert!(matches!(shapley_weight(0, 21), Err(ShapleyError::InvalidSize { .. })));
        // 20 groups, |S| = 9: 9! 10! / 20! = 1 / (20 * C(19, 9)) = 1 / 1847560
        assert_eq!(shapley_weight(9, 20).unwrap(), 1.0 / 1_847_560.0);
    }

    proptest! {
        #[test]
        fn weights_normalize(k in 1usize..=10) {
            // sum over subsets of F \ {cg}: C(K-1, s) subsets of each size s
            let mut total = 0.0;
            let mut binom = 1.0f64;
            for s in 0..k {
                total += binom * shapley_weight(s, k).unwrap();
                binom = binom * (k - 1 - s) as f64 / (s + 1) as f64;
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn impute_cases() {
        let g = table3();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 6, 3, 3);
        let bg = Background::user_supplied(vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5]).unwrap();

        assert_eq!(impute(&x, Coalition::full(3), &g, &bg).unwrap(), x);

        let empty = impute(&x, Coalition::EMPTY, &g, &bg).unwrap();
        for c in 0..6 {
            assert!(empty.channel(c).iter().all(|&v| v == bg.values()[c]));
        }

        let sar = impute(&x, Coalition::EMPTY.with(0), &g, &bg).unwrap();
        assert_eq!(sar.channel(0), x.channel(0));
        assert_eq!(sar.channel(1), x.channel(1));
        for c in 2..6 {
            assert!(sar.channel(c).iter().all(|&v| v == bg.values()[c]));
        }

        assert!(matches!(
            impute(&TensorChw::zeros(5, 1, 1), Coalition::EMPTY, &g, &bg),
            Err(ShapleyError::PartitionInvalid(_))
        ));
    }

    #[test]
    fn single_group_closed_form() {
        let g = ChannelGroupSet::new(2, vec![ChannelGroup::new("all", [0, 1])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = ConvBackend::new(&ConvParams {
            kernels: vec![vec![[[0.3, -0.2, 0.1], [0.5, 1.0, -0.4], [0.0, 0.2, 0.7]]; 2]],
            bias: vec![0.1],
        })
        .unwrap();
        let x = random_tensor(&mut rng, 2, 4, 4);
        let bg = Background::user_supplied(vec![0.2, -0.3]).unwrap();
        let a = explain(&mut b, &x, &g, &bg, &ClassSelection::All).unwrap();
        let fx = b.predict_wide(&x).unwrap();
        let fbg = b.predict_wide(&impute(&x, Coalition::EMPTY, &g, &bg).unwrap()).unwrap();
        for p in 0..16 {
            assert!((a.plane(0, 0)[p] - (fx[p] - fbg[p])).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_permutation_oracle_and_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = table3();
        let kernels: Vec<Vec<[[f32; 3]; 3]>> = (0..2)
            .map(|_| {
                (0..6)
                    .map(|_| {
                        let mut k = [[0.0f32; 3]; 3];
                        for row in &mut k {
                            for v in row.iter_mut() {
                                *v = rng.gen_range(-1.0..1.0);
                            }
                        }
                        k
                    })
                    .collect()
            })
            .collect();
        let mut b = ConvBackend::new(&ConvParams {
            kernels,
            bias: vec![0.2, -0.1],
        })
        .unwrap();
        let x = random_tensor(&mut rng, 6, 4, 4);
        let bg = Background::user_supplied((0..6).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        let a = explain(&mut b, &x, &g, &bg, &ClassSelection::All).unwrap();
        let oracle = permutation_oracle(&mut b, &x, &g, &bg);
        let len = 2 * 16;
        for k in 0..3 {
            for slot in 0..2 {
                for p in 0..16 {
                    let want = oracle[k * len + slot * 16 + p];
                    assert!((a.plane(k, slot)[p] - want).abs() < 1e-9);
                }
            }
        }
        assert!(a.max_efficiency_residual() < 1e-9);

        let again = explain(&mut b, &x, &g, &bg, &ClassSelection::All).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = table3();
        let params = LinearParams {
            weights: (0..2)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            bias: vec![0.0, 1.0],
        };
        let x = random_tensor(&mut rng, 6, 5, 3);
        let bg = Background::zeros(6);
        let seq = explain(
            &mut LinearBackend::new(&params).unwrap(),
            &x,
            &g,
            &bg,
            &ClassSelection::All,
        )
        .unwrap();
        let mut pool: Vec<LinearBackend> = (0..3).map(|_| LinearBackend::new(&params).unwrap()).collect();
        let par = explain_parallel(&mut pool, &x, &g, &bg, &ClassSelection::All).unwrap();
        assert_eq!(par.classes(), seq.classes());
        for k in 0..3 {
            for slot in 0..2 {
                for (u, v) in par.plane(k, slot).iter().zip(seq.plane(k, slot)) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
        let rerun = explain_parallel(&mut pool, &x, &g, &bg, &ClassSelection::All).unwrap();
        assert_eq!(par, rerun);
    }

    #[test]
    fn class_selection() {
        let g = table3();
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![1.0; 6], vec![2.0; 6], vec![3.0; 6]],
            bias: vec![0.0; 3],
        })
        .unwrap();
        let x = TensorChw::filled(6, 2, 2, 1.0);
        let bg = Background::zeros(6);
        let a = explain(&mut b, &x, &g, &bg, &ClassSelection::Only(vec![2, 0, 2])).unwrap();
        assert_eq!(a.classes(), &[0, 2]);
        // RGB holds three channels of weight 3 at value 1.
        assert_eq!(a.phi(1, 1, 0, 0), 9.0);
        assert!(matches!(
            explain(&mut b, &x, &g, &bg, &ClassSelection::Only(vec![3])),
            Err(ShapleyError::ClassOutOfRange { class: 3, .. })
        ));
    }

    #[test]
    fn too_many_groups_guarded() {
        let groups: Vec<ChannelGroup> = (0..21).map(|i| ChannelGroup::new(format!("g{i}"), [i])).collect();
        let g = ChannelGroupSet::new(21, groups).unwrap();
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![1.0; 21]],
            bias: vec![0.0],
        })
        .unwrap();
        assert!(matches!(
            explain(
                &mut b,
                &TensorChw::zeros(21, 1, 1),
                &g,
                &Background::zeros(21),
                &ClassSelection::All
            ),
            Err(ShapleyError::TooManyGroups(21))
        ));
    }

    #[test]
    fn ranking_orders_and_ties() {
        assert_eq!(rank_values(&[3.0, 1.0, 2.0], RankBy::Signed), vec![0, 2, 1]);
        assert_eq!(rank_values(&[5.0, 5.0, 1.0], RankBy::Signed), vec![0, 1, 2]);
        assert_eq!(rank_values(&[0.0, 0.0, 0.0], RankBy::Signed), vec![0, 1, 2]);
        assert_eq!(rank_values(&[1.0, -3.0, 2.0], RankBy::Signed), vec![2, 0, 1]);
        assert_eq!(rank_values(&[1.0, -3.0, 2.0], RankBy::Absolute), vec![1, 2, 0]);
    }

    #[test]
    fn rank_groups_uses_pixel_class() {
        let g = table3();
        // class 0 depends on NIR only, class 1 on SAR only
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]],
            bias: vec![0.0, 0.0],
        })
        .unwrap();
        let x = TensorChw::filled(6, 1, 2, 1.0);
        let a = explain(&mut b, &x, &g, &Background::zeros(6), &ClassSelection::All).unwrap();
        let cls = Mask2D::new(1, 2, vec![0, 1]).unwrap();
        let r = rank_groups(&a, &cls, RankBy::Signed).unwrap();
        assert_eq!(r.at(0, 0), &[2, 0, 1]);
        assert_eq!(r.at(0, 1), &[0, 1, 2]);

        let eligible = Mask2D::new(1, 2, vec![1, 0]).unwrap();
        assert_eq!(mccg_map(&r, &eligible).unwrap().data(), &[2, MCCG_SENTINEL]);
        assert!(rank_groups(&a, &Mask2D::filled(2, 2, 0), RankBy::Signed).is_err());
        assert!(matches!(
            rank_groups(&a, &Mask2D::new(1, 2, vec![0, 2]).unwrap(), RankBy::Signed),
            Err(ShapleyError::ClassOutOfRange { class: 2, .. })
        ));
    }

    #[test]
    fn single_logit_class_zero_negates() {
        let g = table3();
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, -2.0]],
            bias: vec![0.0],
        })
        .unwrap();
        let x = TensorChw::filled(6, 1, 1, 1.0);
        let a = explain(&mut b, &x, &g, &Background::zeros(6), &ClassSelection::All).unwrap();
        let one = rank_groups(&a, &Mask2D::filled(1, 1, 1), RankBy::Signed).unwrap();
        assert_eq!(one.at(0, 0), &[0, 1, 2]);
        let zero = rank_groups(&a, &Mask2D::filled(1, 1, 0), RankBy::Signed).unwrap();
        assert_eq!(zero.at(0, 0), &[2, 1, 0]);
        for (got, want) in zero.values_at_pixel(0).iter().zip([-1.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
