//! Alignment scores (precision at rank, AP@k, mAP@k) and segmentation
//! metrics from confusion counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Mask2D, TensorChw};
use crate::rules::{ConfusionCounts, ReferenceAssignment};
use crate::shapley::{GroupRanking, MCCG_SENTINEL};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("rank {rank} outside 1..={groups}")]
    RankOutOfRange { rank: usize, groups: usize },
    #[error("reference set is empty")]
    EmptyReference,
    #[error("rule {0:?} has no assigned pixels")]
    NoAssignedPixels(String),
    #[error("no eligible pixels")]
    EmptyEligibleSet,
    #[error("bin edges must be finite, strictly increasing and at least two")]
    BadBinEdges,
    #[error("category {value} at pixel {pixel} is neither a group index below {groups} nor the sentinel")]
    InvalidCategory { pixel: usize, value: u8, groups: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// `P(i) = (1/i) * |{j <= i : r_j in G}|`.
pub fn precision_at(i: usize, ranking: &[u8], reference: &[usize]) -> Result<f64, MetricsError> {
    if i == 0 || i > ranking.len() {
        return Err(MetricsError::RankOutOfRange {
            rank: i,
            groups: ranking.len(),
        });
    }
    let hits = ranking[..i]
        .iter()
        .filter(|&&g| reference.contains(&(g as usize)))
        .count();
    Ok(hits as f64 / i as f64)
}

/// `AP@k = (1 / min(|G|, k)) * sum_{i<=k} P(i) * 1{r_i in G}`.
pub fn ap_at_k(ranking: &[u8], reference: &[usize], k: usize) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    if k == 0 || k > ranking.len() {
        return Err(MetricsError::RankOutOfRange {
            rank: k,
            groups: ranking.len(),
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, g) in ranking[..k].iter().enumerate() {
        if reference.contains(&(*g as usize)) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / reference.len().min(k) as f64)
}

/// How the AP cutoff is chosen per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KPolicy {
    /// `k = |G|` of the pixel's reference set.
    #[default]
    Paper,
    Fixed(usize),
}

impl KPolicy {
    pub fn k_for(self, reference: &[usize]) -> usize {
        match self {
            KPolicy::Paper => reference.len(),
            KPolicy::Fixed(k) => k,
        }
    }
}

impl std::fmt::Display for KPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KPolicy::Paper => f.write_str("paper"),
            KPolicy::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl std::str::FromStr for KPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "paper" {
            return Ok(KPolicy::Paper);
        }
        s.strip_prefix("fixed:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(KPolicy::Fixed)
            .ok_or_else(|| format!("bad k policy {s:?} (expected paper|fixed:<k>)"))
    }
}

impl Serialize for KPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for KPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Running AP@k statistics; mergeable so tiles can be summed before the
/// final division.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApStats {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for ApStats {
    fn default() -> Self {
        Self {
            n: 0,
            sum: 0.0,
            sum_sq: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl ApStats {
    pub fn push(&mut self, ap: f64) {
        self.n += 1;
        self.sum += ap;
        self.sum_sq += ap * ap;
        self.min = self.min.min(ap);
        self.max = self.max.max(ap);
    }

    pub fn merge(&mut self, other: &ApStats) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    /// mAP@k, or `None` without pixels.
    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    /// Population standard deviation of the per-pixel AP values.
    pub fn stddev(&self) -> Option<f64> {
        self.mean()
            .map(|m| (self.sum_sq / self.n as f64 - m * m).max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub rule: String,
    pub n: u64,
    pub map_at_k: Option<f64>,
    pub map_at_k_percent: Option<f64>,
    pub ap_min: Option<f64>,
    pub ap_mean: Option<f64>,
    pub ap_max: Option<f64>,
    pub ap_stddev: Option<f64>,
}

impl RuleScore {
    pub fn from_stats(rule: &str, stats: &ApStats) -> Self {
        let some = stats.n > 0;
        Self {
            rule: rule.to_string(),
            n: stats.n,
            map_at_k: stats.mean(),
            map_at_k_percent: stats.mean().map(|m| m * 100.0),
            ap_min: some.then_some(stats.min),
            ap_mean: stats.mean(),
            ap_max: some.then_some(stats.max),
            ap_stddev: stats.stddev(),
        }
    }
}

/// AP@k statistics per rule over the pixels the assignment gives it.
pub fn accumulate_ap(
    rankings: &GroupRanking,
    assignment: &ReferenceAssignment,
    k_policy: KPolicy,
) -> Result<Vec<ApStats>, MetricsError> {
    if rankings.height() != assignment.height() || rankings.width() != assignment.width() {
        return Err(MetricsError::DimMismatch(format!(
            "ranking {}x{}, assignment {}x{}",
            rankings.height(),
            rankings.width(),
            assignment.height(),
            assignment.width()
        )));
    }
    let mut stats = vec![ApStats::default(); assignment.rule_names().len()];
    for p in 0..rankings.height() * rankings.width() {
        if let Some((rule, reference)) = assignment.at(p) {
            let ap = ap_at_k(rankings.at_pixel(p), reference, k_policy.k_for(reference))?;
            stats[rule].push(ap);
        }
    }
    Ok(stats)
}

/// mAP@k per rule; rules without pixels get `map_at_k = None`.
pub fn map_at_k(
    rankings: &GroupRanking,
    assignment: &ReferenceAssignment,
    k_policy: KPolicy,
) -> Result<Vec<RuleScore>, MetricsError> {
    let stats = accumulate_ap(rankings, assignment, k_policy)?;
    Ok(assignment
        .rule_names()
        .iter()
        .zip(&stats)
        .map(|(name, s)| RuleScore::from_stats(name, s))
        .collect())
}

/// mAP@k of a single rule, failing when it has no pixels.
pub fn rule_map_at_k(
    rankings: &GroupRanking,
    assignment: &ReferenceAssignment,
    rule: usize,
    k_policy: KPolicy,
) -> Result<f64, MetricsError> {
    let stats = accumulate_ap(rankings, assignment, k_policy)?;
    stats[rule]
        .mean()
        .ok_or_else(|| MetricsError::NoAssignedPixels(assignment.rule_names()[rule].clone()))
}

/// A ratio that may be undefined (zero denominator), with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

impl Ratio {
    fn of(num: u64, den: u64, reason: &str) -> Self {
        if den == 0 {
            Self::undefined(reason)
        } else {
            Self::defined(num as f64 / den as f64)
        }
    }

    pub fn defined(v: f64) -> Self {
        Self {
            value: Some(v),
            undefined: None,
        }
    }

    pub fn undefined(reason: &str) -> Self {
        Self {
            value: None,
            undefined: Some(reason.to_string()),
        }
    }

    pub fn percent(&self) -> Ratio {
        Ratio {
            value: self.value.map(|v| v * 100.0),
            undefined: self.undefined.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub iou: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

impl SegmentationMetrics {
    pub fn percent(&self) -> SegmentationMetrics {
        SegmentationMetrics {
            iou: self.iou.percent(),
            precision: self.precision.percent(),
            recall: self.recall.percent(),
            f1: self.f1.percent(),
        }
    }
}

/// IoU, precision, recall and F1 (from precision and recall) as fractions.
pub fn segmentation_metrics(c: &ConfusionCounts) -> SegmentationMetrics {
    let iou = Ratio::of(c.tp, c.tp + c.fp + c.fn_, "TP + FP + FN = 0");
    let precision = Ratio::of(c.tp, c.tp + c.fp, "TP + FP = 0");
    let recall = Ratio::of(c.tp, c.tp + c.fn_, "TP + FN = 0");
    let f1 = match (precision.value, recall.value) {
        (Some(p), Some(r)) if p + r > 0.0 => Ratio::defined(2.0 * p * r / (p + r)),
        // both zero: TP = 0 with FP, FN > 0, where 2TP / (2TP + FP + FN) = 0
        (Some(_), Some(_)) => Ratio::defined(0.0),
        _ => Ratio::undefined("precision or recall undefined"),
    };
    SegmentationMetrics {
        iou,
        precision,
        recall,
        f1,
    }
}

/// `2TP / (2TP + FP + FN)`, the closed form of F1.
pub fn f1_from_counts(c: &ConfusionCounts) -> Option<f64> {
    let den = 2 * c.tp + c.fp + c.fn_;
    (den > 0).then(|| 2.0 * c.tp as f64 / den as f64)
}

/// Eligible-pixel counts per top group of an MCCG map.
pub fn mccg_counts(mccg: &Mask2D, groups: usize) -> Result<Vec<u64>, MetricsError> {
    let mut counts = vec![0u64; groups];
    for (p, &v) in mccg.data().iter().enumerate() {
        if v == MCCG_SENTINEL {
            continue;
        }
        match counts.get_mut(v as usize) {
            Some(c) => *c += 1,
            None => {
                return Err(MetricsError::InvalidCategory {
                    pixel: p,
                    value: v,
                    groups,
                })
            }
        }
    }
    Ok(counts)
}

pub fn proportions(counts: &[u64]) -> Result<Vec<f64>, MetricsError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(MetricsError::EmptyEligibleSet);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Fraction of eligible pixels whose most contributed group is each group.
pub fn mccg_proportions(mccg: &Mask2D, groups: usize) -> Result<Vec<f64>, MetricsError> {
    proportions(&mccg_counts(mccg, groups)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f32>,
    /// `counts[group][bin]`.
    pub counts: Vec<Vec<u64>>,
}

impl Histogram {
    pub fn empty(groups: usize, edges: &[f32]) -> Result<Self, MetricsError> {
        check_edges(edges)?;
        Ok(Self {
            edges: edges.to_vec(),
            counts: vec![vec![0; edges.len() - 1]; groups],
        })
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn group_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

fn check_edges(edges: &[f32]) -> Result<(), MetricsError> {
    if edges.len() < 2 || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadBinEdges);
    }
    Ok(())
}

/// Bin `i` covers `[edges[i], edges[i+1])`; values outside the range clamp
/// to the end bins.
pub fn bin_index(edges: &[f32], v: f32) -> usize {
    let bins = edges.len() - 1;
    // first edge strictly greater than v, minus one
    let i = edges.partition_point(|&e| e <= v);
    i.saturating_sub(1).min(bins - 1)
}

/// Counts eligible pixels per (top group, band-value bin).
pub fn band_histogram(
    mccg: &Mask2D,
    band: &TensorChw,
    channel: usize,
    groups: usize,
    edges: &[f32],
) -> Result<Histogram, MetricsError> {
    let mut hist = Histogram::empty(groups, edges)?;
    if !mccg.same_shape(band.height(), band.width()) || channel >= band.channels() {
        return Err(MetricsError::DimMismatch(format!(
            "MCCG {}x{}, band {}x{}x{} (channel {channel})",
            mccg.height(),
            mccg.width(),
            band.channels(),
            band.height(),
            band.width()
        )));
    }
    for (p, (&g, &v)) in mccg.data().iter().zip(band.channel(channel)).enumerate() {
        if g == MCCG_SENTINEL {
            continue;
        }
        let row = hist.counts.get_mut(g as usize).ok_or(MetricsError::InvalidCategory {
            pixel: p,
            value: g,
            groups,
        })?;
        row[bin_index(edges, v)] += 1;
    }
    Ok(hist)
}

/// Mean and sample standard deviation (n - 1); the deviation is `None` for
/// fewer than two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::{rank_values, RankBy};
    use proptest::prelude::*;

    const SAR: u8 = 0;
    const RGB: u8 = 1;
    const NIR: u8 = 2;

    #[test]
    fn precision_by_hand() {
        let r = [0u8, 1, 2];
        assert_eq!(precision_at(1, &r, &[0]), Ok(1.0));
        assert_eq!(precision_at(2, &r, &[0]), Ok(0.5));
        for i in 1..=3 {
            assert_eq!(precision_at(i, &r, &[]), Ok(0.0));
        }
        assert!(precision_at(0, &r, &[0]).is_err());
        assert!(precision_at(4, &r, &[0]).is_err());
    }

    #[test]
    fn ap_by_hand() {
        assert_eq!(ap_at_k(&[SAR, RGB, NIR], &[0], 1), Ok(1.0));
        assert_eq!(ap_at_k(&[SAR, RGB, NIR], &[0, 2], 2), Ok(0.5));
        assert_eq!(ap_at_k(&[NIR, SAR, RGB], &[0, 2], 2), Ok(1.0));
        // |G| > k divides by k
        assert_eq!(ap_at_k(&[SAR, NIR, RGB], &[0, 1, 2], 1), Ok(1.0));
        assert_eq!(ap_at_k(&[SAR], &[], 1), Err(MetricsError::EmptyReference));
        assert!(ap_at_k(&[SAR], &[0], 2).is_err());
    }

    #[test]
    fn k_policy_parsing() {
        assert_eq!("paper".parse(), Ok(KPolicy::Paper));
        assert_eq!("fixed:3".parse(), Ok(KPolicy::Fixed(3)));
        assert!("fixed:0".parse::<KPolicy>().is_err());
        assert!("top3".parse::<KPolicy>().is_err());
        assert_eq!(KPolicy::Fixed(2).to_string(), "fixed:2");
    }

    #[test]
    fn ap_stats_mean() {
        let mut s = ApStats::default();
        s.push(0.5);
        s.push(1.0);
        assert_eq!(s.mean(), Some(0.75));
        assert_eq!(s.stddev(), Some(0.25));
        let mut one = ApStats::default();
        one.push(0.5);
        assert_eq!(one.mean(), Some(0.5));
        assert_eq!(ApStats::default().mean(), None);
    }

    #[test]
    fn segmentation_by_hand() {
        let c = ConfusionCounts {
            tp: 84,
            fp: 8,
            fn_: 8,
            tn: 900,
        };
        let m = segmentation_metrics(&c);
        assert_eq!(m.iou.value, Some(0.84));
        assert_eq!(m.percent().iou.value, Some(84.0));
        // P = R here, so F1 = P
        assert_eq!(m.precision.value, m.recall.value);
        assert!((m.f1.value.unwrap() - m.precision.value.unwrap()).abs() < 1e-15);
        assert!((m.f1.value.unwrap() - f1_from_counts(&c).unwrap()).abs() < 1e-12);

        let empty = segmentation_metrics(&ConfusionCounts::default());
        for r in [&empty.iou, &empty.precision, &empty.recall, &empty.f1] {
            assert_eq!(r.value, None);
            assert!(r.undefined.is_some());
        }

        let miss = segmentation_metrics(&ConfusionCounts {
            tp: 0,
            fp: 3,
            fn_: 2,
            tn: 0,
        });
        assert_eq!(miss.f1.value, Some(0.0));
        assert_eq!(miss.iou.value, Some(0.0));
    }

    #[test]
    fn proportions_and_histogram() {
        let all0 = Mask2D::filled(2, 2, 0);
        assert_eq!(mccg_proportions(&all0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
        let split = Mask2D::new(1, 4, vec![0, 1, 2, MCCG_SENTINEL]).unwrap();
        let p = mccg_proportions(&split, 3).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(
            mccg_proportions(&Mask2D::filled(1, 1, MCCG_SENTINEL), 3),
            Err(MetricsError::EmptyEligibleSet)
        );
        assert!(matches!(
            mccg_proportions(&Mask2D::filled(1, 1, 7), 3),
            Err(MetricsError::InvalidCategory { .. })
        ));

        let edges = [0.0, 0.1, 0.2, 0.3];
        let one = Mask2D::filled(1, 1, 1);
        let band = TensorChw::filled(1, 1, 1, 0.15);
        let h = band_histogram(&one, &band, 0, 3, &edges).unwrap();
        assert_eq!(h.counts[1], vec![0, 1, 0]);
        assert_eq!(h.counts[0], vec![0, 0, 0]);

        let none = Mask2D::filled(1, 1, MCCG_SENTINEL);
        let h = band_histogram(&none, &band, 0, 3, &edges).unwrap();
        assert!(h.counts.iter().flatten().all(|&c| c == 0));

        assert_eq!(
            band_histogram(&one, &band, 0, 3, &[0.0, 0.0]),
            Err(MetricsError::BadBinEdges)
        );
        assert_eq!(
            band_histogram(&one, &band, 0, 3, &[0.0]),
            Err(MetricsError::BadBinEdges)
        );
    }

    #[test]
    fn bins_clamp_and_boundaries() {
        let e = [0.0, 0.1, 0.2, 0.3];
        assert_eq!(bin_index(&e, -5.0), 0);
        assert_eq!(bin_index(&e, 0.0), 0);
        assert_eq!(bin_index(&e, 0.1), 1);
        assert_eq!(bin_index(&e, 0.3), 2);
        assert_eq!(bin_index(&e, 9.0), 2);
    }

    #[test]
    fn map_over_two_pixels() {
        use crate::groups::{ChannelGroup, ChannelGroupSet};
        use crate::rules::parse_rules;
        let groups = ChannelGroupSet::new(
            3,
            vec![
                ChannelGroup::new("SAR", [0]),
                ChannelGroup::new("RGB", [1]),
                ChannelGroup::new("NIR", [2]),
            ],
        )
        .unwrap();
        let rules = parse_rules(
            r#"{"rules":[{"name":"both","when":[],"reference":["SAR","NIR"]}]}"#,
            &groups,
        )
        .unwrap();
        let ranking = crate::shapley::ranking_from_orders(1, 2, 3, &[vec![SAR, RGB, NIR], vec![NIR, SAR, RGB]]);
        let assignment = ReferenceAssignment::single_rule(&rules, 0, &Mask2D::filled(1, 2, 1));
        let scores = map_at_k(&ranking, &assignment, KPolicy::Paper).unwrap();
        assert_eq!(scores[0].map_at_k, Some(0.75));
        assert_eq!(scores[0].n, 2);
        assert_eq!(rule_map_at_k(&ranking, &assignment, 0, KPolicy::Paper), Ok(0.75));

        let nobody = ReferenceAssignment::single_rule(&rules, 0, &Mask2D::filled(1, 2, 0));
        assert_eq!(map_at_k(&ranking, &nobody, KPolicy::Paper).unwrap()[0].map_at_k, None);
        assert!(matches!(
            rule_map_at_k(&ranking, &nobody, 0, KPolicy::Paper),
            Err(MetricsError::NoAssignedPixels(_))
        ));
        assert!(map_at_k(&ranking, &assignment, KPolicy::Fixed(4)).is_err());
    }

    #[test]
    fn run_dispersion() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[0.5]), (Some(0.5), None));
        let (m, s) = mean_std(&[0.5, 1.0]);
        assert_eq!(m, Some(0.75));
        assert!((s.unwrap() - 0.125f64.sqrt()).abs() < 1e-15);
    }

    fn reference_strategy(k: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::sample::subsequence((0..k).collect::<Vec<_>>(), 1..=k)
    }

    proptest! {
        #[test]
        fn ap_bounded_and_perfect_iff_prefix(
            values in proptest::collection::vec(-10.0f64..10.0, 5),
            reference in reference_strategy(5),
            k in 1usize..=5,
        ) {
            let ranking = rank_values(&values, RankBy::Signed);
            let ap = ap_at_k(&ranking, &reference, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let m = reference.len().min(k);
            let prefix_in_g = ranking[..m].iter().all(|&g| reference.contains(&(g as usize)));
            prop_assert_eq!(ap == 1.0, prefix_in_g);
        }

        #[test]
        fn ap_invariant_under_monotone_transform(
            values in proptest::collection::vec(-10.0f64..10.0, 5),
            reference in reference_strategy(5),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let k = reference.len();
            let a = ap_at_k(&rank_values(&values, RankBy::Signed), &reference, k).unwrap();
            let transformed: Vec<f64> = values.iter().map(|v| (scale * v + shift).exp()).collect();
            let b = ap_at_k(&rank_values(&transformed, RankBy::Signed), &reference, k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn histogram_conserves_mccg_counts(
            cells in proptest::collection::vec((0u8..4, -1.0f32..2.0), 1..40),
        ) {
            let n = cells.len();
            let mccg = Mask2D::new(1, n, cells.iter().map(|c| if c.0 == 3 { MCCG_SENTINEL } else { c.0 }).collect()).unwrap();
            let band = TensorChw::new(1, 1, n, cells.iter().map(|c| c.1).collect()).unwrap();
            let h = band_histogram(&mccg, &band, 0, 3, &[0.0, 0.5, 1.0]).unwrap();
            prop_assert_eq!(h.group_totals(), mccg_counts(&mccg, 3).unwrap());
        }
    }
}
