//! Declarative reference explanations.
//!
//! A rule is a conjunction of per-pixel predicates plus the set of channel
//! groups that domain knowledge holds responsible where the rule fires.
//! Rules are evaluated in order and the last matching rule assigns the
//! pixel, so a later, more specific rule refines an earlier general one.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::groups::ChannelGroupSet;
use crate::raster::{Mask2D, TensorChw};

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("schema error at {path}: {reason}")]
    SchemaError { path: String, reason: String },
    #[error("unknown channel group {0:?}")]
    UnknownGroup(String),
    #[error("unknown band {0:?}")]
    UnknownBand(String),
    #[error("unknown mask {0:?}")]
    UnknownMask(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("evaluation context lacks {0:?}")]
    MissingContext(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> RuleError {
    RuleError::SchemaError {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfusionKind {
    Tp,
    Fp,
    Fn,
    Tn,
}

impl ConfusionKind {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tp" => Some(Self::Tp),
            "fp" => Some(Self::Fp),
            "fn" => Some(Self::Fn),
            "tn" => Some(Self::Tn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    InMask(String),
    InTp(usize),
    InConfusion(usize, ConfusionKind),
    /// Strict `value < threshold` on one channel of a raw band tensor.
    BandBelow {
        band: String,
        channel: usize,
        threshold: f32,
    },
    /// `value >= threshold`.
    BandAtLeast {
        band: String,
        channel: usize,
        threshold: f32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub conditions: Vec<Predicate>,
    /// Group indices, ascending.
    pub reference: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    groups: usize,
}

impl RuleSet {
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.groups
    }

    /// Class ids that any predicate conditions on.
    pub fn referenced_classes(&self) -> BTreeSet<usize> {
        self.rules
            .iter()
            .flat_map(|r| r.conditions.iter())
            .filter_map(|p| match p {
                Predicate::InTp(c) | Predicate::InConfusion(c, _) => Some(*c),
                _ => None,
            })
            .collect()
    }
}

/// Identifiers a rule file may refer to. `None` leaves that namespace
/// unchecked at parse time.
#[derive(Debug, Clone, Default)]
pub struct RuleVocabulary {
    pub class_names: Vec<String>,
    pub class_count: Option<usize>,
    pub masks: Option<BTreeSet<String>>,
    pub bands: Option<BTreeSet<String>>,
}

pub fn parse_rules(text: &str, groups: &ChannelGroupSet) -> Result<RuleSet, RuleError> {
    parse_rules_with(text, groups, &RuleVocabulary::default())
}

/// Parses `{"rules": [{"name", "when": [{"pred", ...}], "reference": [group]}]}`.
pub fn parse_rules_with(text: &str, groups: &ChannelGroupSet, vocab: &RuleVocabulary) -> Result<RuleSet, RuleError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    only_keys(obj, "$", &["rules"])?;
    let items = obj
        .get("rules")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("$.rules", "expected an array"))?;

    let mut rules = Vec::with_capacity(items.len());
    for (ri, item) in items.iter().enumerate() {
        let path = format!("$.rules[{ri}]");
        let r = item.as_object().ok_or_else(|| schema(&path, "expected an object"))?;
        only_keys(r, &path, &["name", "when", "reference"])?;
        let name = r
            .get("name")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| schema(format!("{path}.name"), "expected a nonempty string"))?;
        if rules.iter().any(|x: &Rule| x.name == name) {
            return Err(schema(format!("{path}.name"), format!("duplicate rule name {name:?}")));
        }
        let when = r
            .get("when")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(format!("{path}.when"), "expected an array"))?;
        let conditions = when
            .iter()
            .enumerate()
            .map(|(pi, p)| parse_predicate(p, &format!("{path}.when[{pi}]"), vocab))
            .collect::<Result<Vec<_>, _>>()?;

        let refs = r
            .get("reference")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(format!("{path}.reference"), "expected an array"))?;
        if refs.is_empty() {
            return Err(schema(format!("{path}.reference"), "reference set must be nonempty"));
        }
        let mut reference = Vec::with_capacity(refs.len());
        for (gi, g) in refs.iter().enumerate() {
            let gname = g
                .as_str()
                .ok_or_else(|| schema(format!("{path}.reference[{gi}]"), "expected a group name"))?;
            let idx = groups
                .index_of(gname)
                .ok_or_else(|| RuleError::UnknownGroup(gname.to_string()))?;
            if !reference.contains(&idx) {
                reference.push(idx);
            }
        }
        reference.sort_unstable();
        rules.push(Rule {
            name: name.to_string(),
            conditions,
            reference,
        });
    }
    Ok(RuleSet {
        rules,
        groups: groups.len(),
    })
}

fn only_keys(obj: &Map<String, Value>, path: &str, allowed: &[&str]) -> Result<(), RuleError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(format!("{path}.{k}"), "unknown field")),
        None => Ok(()),
    }
}

fn parse_class(v: Option<&Value>, path: &str, vocab: &RuleVocabulary) -> Result<usize, RuleError> {
    let cls = match v {
        Some(Value::Number(n)) => n
            .as_u64()
            .filter(|&c| c < 256)
            .ok_or_else(|| schema(path, "expected a class id below 256"))? as usize,
        Some(Value::String(s)) => vocab
            .class_names
            .iter()
            .position(|c| c == s)
            .ok_or_else(|| RuleError::UnknownClass(s.clone()))?,
        _ => return Err(schema(path, "expected a class id or name")),
    };
    if let Some(count) = vocab
        .class_count
        .or((!vocab.class_names.is_empty()).then_some(vocab.class_names.len()))
    {
        if cls >= count {
            return Err(RuleError::UnknownClass(cls.to_string()));
        }
    }
    Ok(cls)
}

fn parse_predicate(v: &Value, path: &str, vocab: &RuleVocabulary) -> Result<Predicate, RuleError> {
    let obj = v.as_object().ok_or_else(|| schema(path, "expected an object"))?;
    let kind = obj
        .get("pred")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(format!("{path}.pred"), "expected a predicate name"))?;
    let string_arg = |key: &str| -> Result<String, RuleError> {
        obj.get(key)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| schema(format!("{path}.{key}"), "expected a string"))
    };
    match kind {
        "in_mask" => {
            only_keys(obj, path, &["pred", "mask"])?;
            let mask = string_arg("mask")?;
            if let Some(known) = &vocab.masks {
                if !known.contains(&mask) {
                    return Err(RuleError::UnknownMask(mask));
                }
            }
            Ok(Predicate::InMask(mask))
        }
        "in_tp" => {
            only_keys(obj, path, &["pred", "class"])?;
            Ok(Predicate::InTp(parse_class(
                obj.get("class"),
                &format!("{path}.class"),
                vocab,
            )?))
        }
        "in_confusion" => {
            only_keys(obj, path, &["pred", "class", "kind"])?;
            let cls = parse_class(obj.get("class"), &format!("{path}.class"), vocab)?;
            let k = string_arg("kind")?;
            let kind =
                ConfusionKind::parse(&k).ok_or_else(|| schema(format!("{path}.kind"), "expected tp|fp|fn|tn"))?;
            Ok(Predicate::InConfusion(cls, kind))
        }
        "band_below" | "band_at_least" => {
            only_keys(obj, path, &["pred", "band", "channel", "threshold"])?;
            let band = string_arg("band")?;
            if let Some(known) = &vocab.bands {
                if !known.contains(&band) {
                    return Err(RuleError::UnknownBand(band));
                }
            }
            let channel = match obj.get("channel") {
                None => 0,
                Some(c) => c
                    .as_u64()
                    .ok_or_else(|| schema(format!("{path}.channel"), "expected a channel index"))?
                    as usize,
            };
            let threshold = obj
                .get("threshold")
                .and_then(Value::as_f64)
                .map(|t| t as f32)
                .filter(|t| t.is_finite())
                .ok_or_else(|| schema(format!("{path}.threshold"), "expected a finite number"))?;
            Ok(if kind == "band_below" {
                Predicate::BandBelow {
                    band,
                    channel,
                    threshold,
                }
            } else {
                Predicate::BandAtLeast {
                    band,
                    channel,
                    threshold,
                }
            })
        }
        other => Err(schema(format!("{path}.pred"), format!("unknown predicate {other:?}"))),
    }
}

/// TP/FP/FN/TN masks of one class over the valid pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMasks {
    pub class: usize,
    pub tp: Mask2D,
    pub fp: Mask2D,
    pub fn_: Mask2D,
    pub tn: Mask2D,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

impl ConfusionMasks {
    pub fn mask(&self, kind: ConfusionKind) -> &Mask2D {
        match kind {
            ConfusionKind::Tp => &self.tp,
            ConfusionKind::Fp => &self.fp,
            ConfusionKind::Fn => &self.fn_,
            ConfusionKind::Tn => &self.tn,
        }
    }

    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp.count_nonzero() as u64,
            fp: self.fp.count_nonzero() as u64,
            fn_: self.fn_.count_nonzero() as u64,
            tn: self.tn.count_nonzero() as u64,
        }
    }
}

pub fn confusion_masks(label: &Mask2D, pred: &Mask2D, cls: usize, valid: &Mask2D) -> Result<ConfusionMasks, RuleError> {
    let (h, w) = (label.height(), label.width());
    if !pred.same_shape(h, w) || !valid.same_shape(h, w) {
        return Err(RuleError::DimMismatch(format!(
            "label {}x{}, prediction {}x{}, valid {}x{}",
            h,
            w,
            pred.height(),
            pred.width(),
            valid.height(),
            valid.width()
        )));
    }
    let mut out = [
        Mask2D::filled(h, w, 0),
        Mask2D::filled(h, w, 0),
        Mask2D::filled(h, w, 0),
        Mask2D::filled(h, w, 0),
    ];
    for p in 0..h * w {
        if valid.data()[p] == 0 {
            continue;
        }
        let is_label = label.data()[p] as usize == cls;
        let is_pred = pred.data()[p] as usize == cls;
        let which = match (is_label, is_pred) {
            (true, true) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (false, false) => 3,
        };
        out[which].data_mut()[p] = 1;
    }
    let [tp, fp, fn_, tn] = out;
    Ok(ConfusionMasks {
        class: cls,
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Rasters a rule set is evaluated against.
#[derive(Debug, Clone, Default)]
pub struct RuleContext {
    pub masks: HashMap<String, Mask2D>,
    pub bands: HashMap<String, TensorChw>,
    pub confusion: BTreeMap<usize, ConfusionMasks>,
}

enum Resolved<'a> {
    Flag(&'a [u8]),
    Below(&'a [f32], f32),
    AtLeast(&'a [f32], f32),
}

impl Resolved<'_> {
    #[inline]
    fn holds(&self, p: usize) -> bool {
        match *self {
            Resolved::Flag(m) => m[p] != 0,
            Resolved::Below(v, t) => v[p] < t,
            Resolved::AtLeast(v, t) => v[p] >= t,
        }
    }
}

impl RuleContext {
    fn resolve<'a>(&'a self, p: &Predicate, height: usize, width: usize) -> Result<Resolved<'a>, RuleError> {
        let check_mask = |m: &'a Mask2D, id: &str| -> Result<&'a [u8], RuleError> {
            if !m.same_shape(height, width) {
                return Err(RuleError::DimMismatch(format!(
                    "{id} is {}x{}, expected {height}x{width}",
                    m.height(),
                    m.width()
                )));
            }
            Ok(m.data())
        };
        let confusion = |cls: usize| {
            self.confusion
                .get(&cls)
                .ok_or_else(|| RuleError::MissingContext(format!("confusion masks for class {cls}")))
        };
        let band = |id: &str, channel: usize| -> Result<&'a [f32], RuleError> {
            let t = self
                .bands
                .get(id)
                .ok_or_else(|| RuleError::MissingContext(format!("band {id}")))?;
            if t.height() != height || t.width() != width {
                return Err(RuleError::DimMismatch(format!(
                    "band {id} is {}x{}, expected {height}x{width}",
                    t.height(),
                    t.width()
                )));
            }
            if channel >= t.channels() {
                return Err(RuleError::MissingContext(format!("band {id} channel {channel}")));
            }
            Ok(t.channel(channel))
        };
        Ok(match p {
            Predicate::InMask(id) => Resolved::Flag(check_mask(
                self.masks
                    .get(id)
                    .ok_or_else(|| RuleError::MissingContext(format!("mask {id}")))?,
                id,
            )?),
            Predicate::InTp(cls) => Resolved::Flag(check_mask(&confusion(*cls)?.tp, "TP mask")?),
            Predicate::InConfusion(cls, kind) => {
                Resolved::Flag(check_mask(confusion(*cls)?.mask(*kind), "confusion mask")?)
            }
            Predicate::BandBelow {
                band: id,
                channel,
                threshold,
            } => Resolved::Below(band(id, *channel)?, *threshold),
            Predicate::BandAtLeast {
                band: id,
                channel,
                threshold,
            } => Resolved::AtLeast(band(id, *channel)?, *threshold),
        })
    }
}

/// Per-pixel winning rule (last match) and its reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceAssignment {
    height: usize,
    width: usize,
    rule_names: Vec<String>,
    references: Vec<Vec<usize>>,
    assigned: Vec<Option<u16>>,
}

impl ReferenceAssignment {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rule_names(&self) -> &[String] {
        &self.rule_names
    }

    pub fn reference(&self, rule: usize) -> &[usize] {
        &self.references[rule]
    }

    /// Winning rule index and reference set at flat pixel `p`.
    pub fn at(&self, p: usize) -> Option<(usize, &[usize])> {
        self.assigned[p].map(|r| (r as usize, self.references[r as usize].as_slice()))
    }

    pub fn assigned_count(&self) -> usize {
        self.assigned.iter().filter(|a| a.is_some()).count()
    }

    /// Unassigns every pixel that is zero in `mask`.
    pub fn restrict(&mut self, mask: &Mask2D) {
        assert!(mask.same_shape(self.height, self.width), "restrict mask shape");
        for (a, &m) in self.assigned.iter_mut().zip(mask.data()) {
            if m == 0 {
                *a = None;
            }
        }
    }

    /// Assignment where each pixel set in `mask` belongs to `rule` alone.
    /// Used to score one rule's reference set over every pixel it matches.
    pub fn single_rule(rules: &RuleSet, rule: usize, mask: &Mask2D) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            rule_names: rules.rules.iter().map(|r| r.name.clone()).collect(),
            references: rules.rules.iter().map(|r| r.reference.clone()).collect(),
            assigned: mask.data().iter().map(|&m| (m != 0).then_some(rule as u16)).collect(),
        }
    }
}

fn dims_of(ctx: &RuleContext) -> Option<(usize, usize)> {
    ctx.masks
        .values()
        .map(|m| (m.height(), m.width()))
        .chain(ctx.confusion.values().map(|c| (c.tp.height(), c.tp.width())))
        .chain(ctx.bands.values().map(|t| (t.height(), t.width())))
        .next()
}

/// Per-rule match masks, each rule evaluated independently.
pub fn rule_matches(rules: &RuleSet, ctx: &RuleContext, height: usize, width: usize) -> Result<Vec<Mask2D>, RuleError> {
    rules
        .rules
        .iter()
        .map(|rule| {
            let preds = rule
                .conditions
                .iter()
                .map(|p| ctx.resolve(p, height, width))
                .collect::<Result<Vec<_>, _>>()?;
            let data = (0..height * width)
                .map(|p| u8::from(preds.iter().all(|r| r.holds(p))))
                .collect();
            Ok(Mask2D::new(height, width, data).expect("dims checked"))
        })
        .collect()
}

/// Evaluates every rule at every pixel; the last matching rule wins.
pub fn assign_references(rules: &RuleSet, ctx: &RuleContext) -> Result<ReferenceAssignment, RuleError> {
    let (height, width) = dims_of(ctx).ok_or_else(|| RuleError::MissingContext("any raster".into()))?;
    assign_references_sized(rules, ctx, height, width)
}

pub fn assign_references_sized(
    rules: &RuleSet,
    ctx: &RuleContext,
    height: usize,
    width: usize,
) -> Result<ReferenceAssignment, RuleError> {
    let matches = rule_matches(rules, ctx, height, width)?;
    let mut assigned = vec![None; height * width];
    for (ri, m) in matches.iter().enumerate() {
        for (a, &hit) in assigned.iter_mut().zip(m.data()) {
            if hit != 0 {
                *a = Some(ri as u16);
            }
        }
    }
    for rule in &rules.rules {
        assert!(rule.reference.iter().all(|&g| g < rules.groups));
    }
    Ok(ReferenceAssignment {
        height,
        width,
        rule_names: rules.rules.iter().map(|r| r.name.clone()).collect(),
        references: rules.rules.iter().map(|r| r.reference.clone()).collect(),
        assigned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::ChannelGroup;

    fn table3_groups() -> ChannelGroupSet {
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

    const TABLE3_RULES: &str = r#"{"rules": [
        {"name": "RE_case1-1",
         "when": [{"pred": "in_mask", "mask": "cloud"}, {"pred": "in_tp", "class": "water"}],
         "reference": ["SAR"]},
        {"name": "RE_case1-2",
         "when": [{"pred": "in_mask", "mask": "cloud"}, {"pred": "in_tp", "class": "water"},
                  {"pred": "band_below", "band": "nir", "threshold": 0.2}],
         "reference": ["SAR", "NIR"]}
    ]}"#;

    fn vocab() -> RuleVocabulary {
        RuleVocabulary {
            class_names: vec!["land".into(), "water".into()],
            class_count: None,
            masks: Some(["cloud".to_string()].into()),
            bands: Some(["nir".to_string()].into()),
        }
    }

    #[test]
    fn confusion_hand_case() {
        let label = Mask2D::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let pred = Mask2D::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let valid = Mask2D::filled(2, 2, 1);
        let cm = confusion_masks(&label, &pred, 1, &valid).unwrap();
        assert_eq!(
            cm.counts(),
            ConfusionCounts {
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1
            }
        );
        assert_eq!(cm.tp.data(), &[1, 0, 0, 0]);
        assert_eq!(cm.fn_.data(), &[0, 1, 0, 0]);
        assert_eq!(cm.fp.data(), &[0, 0, 1, 0]);
    }

    #[test]
    fn confusion_extremes_and_validity() {
        let label = Mask2D::new(1, 4, vec![1, 0, 1, 0]).unwrap();
        let all = Mask2D::filled(1, 4, 1);
        let same = confusion_masks(&label, &label, 1, &all).unwrap().counts();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let flipped = Mask2D::new(1, 4, vec![0, 1, 0, 1]).unwrap();
        let c = confusion_masks(&label, &flipped, 1, &all).unwrap().counts();
        assert_eq!((c.tp, c.tn), (0, 0));

        let valid = Mask2D::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let c = confusion_masks(&label, &label, 1, &valid).unwrap().counts();
        assert_eq!(c.tp + c.fp + c.fn_ + c.tn, 2);
        assert!(confusion_masks(&label, &Mask2D::filled(2, 2, 0), 1, &all).is_err());
    }

    #[test]
    fn parses_table3_rules() {
        let rs = parse_rules_with(TABLE3_RULES, &table3_groups(), &vocab()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(
            rs.rules()[0].conditions,
            vec![Predicate::InMask("cloud".into()), Predicate::InTp(1)]
        );
        assert_eq!(rs.rules()[0].reference, vec![0]);
        assert_eq!(rs.rules()[1].reference, vec![0, 2]);
        assert_eq!(
            rs.rules()[1].conditions[2],
            Predicate::BandBelow {
                band: "nir".into(),
                channel: 0,
                threshold: 0.2
            }
        );
        assert_eq!(rs.referenced_classes(), [1].into());
    }

    #[test]
    fn parses_table4_rules() {
        let groups = ChannelGroupSet::new(
            9,
            vec![
                ChannelGroup::new("Int_VV", [0, 1]),
                ChannelGroup::new("Int_VH", [2, 3]),
                ChannelGroup::new("Coh_VV", [4, 5]),
                ChannelGroup::new("Coh_VH", [6, 7]),
                ChannelGroup::new("WSF", [8]),
            ],
        )
        .unwrap();
        let text = r#"{"rules": [
            {"name": "RE_case2-1", "when": [{"pred": "in_tp", "class": "flooded_open"}],
             "reference": ["Int_VV", "Int_VH"]},
            {"name": "RE_case2-2", "when": [{"pred": "in_tp", "class": "flooded_urban"}],
             "reference": ["Coh_VV", "Coh_VH", "WSF"]}]}"#;
        let v = RuleVocabulary {
            class_names: vec!["non_flood".into(), "flooded_open".into(), "flooded_urban".into()],
            ..Default::default()
        };
        let rs = parse_rules_with(text, &groups, &v).unwrap();
        assert_eq!(rs.rules()[0].conditions, vec![Predicate::InTp(1)]);
        assert_eq!(rs.rules()[0].reference, vec![0, 1]);
        assert_eq!(rs.rules()[1].conditions, vec![Predicate::InTp(2)]);
        assert_eq!(rs.rules()[1].reference, vec![2, 3, 4]);
    }

    #[test]
    fn parse_errors() {
        let g = table3_groups();
        let unknown = r#"{"rules": [{"name": "r", "when": [], "reference": ["XYZ"]}]}"#;
        assert_eq!(parse_rules(unknown, &g), Err(RuleError::UnknownGroup("XYZ".into())));

        let band = r#"{"rules": [{"name": "r", "when": [{"pred": "band_below", "band": "swir", "threshold": 1}], "reference": ["SAR"]}]}"#;
        assert_eq!(
            parse_rules_with(band, &g, &vocab()),
            Err(RuleError::UnknownBand("swir".into()))
        );
        // unchecked namespaces accept any band id
        assert!(parse_rules(band, &g).is_ok());

        let mask = r#"{"rules": [{"name": "r", "when": [{"pred": "in_mask", "mask": "snow"}], "reference": ["SAR"]}]}"#;
        assert_eq!(
            parse_rules_with(mask, &g, &vocab()),
            Err(RuleError::UnknownMask("snow".into()))
        );

        let class = r#"{"rules": [{"name": "r", "when": [{"pred": "in_tp", "class": "lava"}], "reference": ["SAR"]}]}"#;
        assert_eq!(
            parse_rules_with(class, &g, &vocab()),
            Err(RuleError::UnknownClass("lava".into()))
        );

        for bad in [
            r#"{"rules": [{"name": "r", "when": [], "reference": []}]}"#,
            r#"{"rules": [{"name": "r", "when": [{"pred": "or"}], "reference": ["SAR"]}]}"#,
            r#"{"rules": [{"name": "r", "when": [], "reference": ["SAR"]}, {"name": "r", "when": [], "reference": ["SAR"]}]}"#,
            r#"{"rules": [{"name": "r", "when": [{"pred": "in_confusion", "class": 1, "kind": "xx"}], "reference": ["SAR"]}]}"#,
            r#"{"rules": [], "extra": true}"#,
            r#"not json"#,
        ] {
            assert!(
                matches!(parse_rules(bad, &g), Err(RuleError::SchemaError { .. })),
                "{bad}"
            );
        }
    }

    fn cloudy_tp_context(nir: &[f32]) -> RuleContext {
        let n = nir.len();
        let mut ctx = RuleContext::default();
        ctx.masks.insert("cloud".into(), Mask2D::filled(1, n, 1));
        let label = Mask2D::filled(1, n, 1);
        ctx.confusion
            .insert(1, confusion_masks(&label, &label, 1, &Mask2D::filled(1, n, 1)).unwrap());
        ctx.bands
            .insert("nir".into(), TensorChw::new(1, 1, n, nir.to_vec()).unwrap());
        ctx
    }

    #[test]
    fn last_match_wins_with_strict_threshold() {
        let rs = parse_rules_with(TABLE3_RULES, &table3_groups(), &vocab()).unwrap();
        let below = f32::from_bits(0.2f32.to_bits() - 1);
        let ctx = cloudy_tp_context(&[0.1, 0.5, 0.2, below]);
        let a = assign_references(&rs, &ctx).unwrap();
        assert_eq!(a.at(0), Some((1, &[0usize, 2][..])));
        assert_eq!(a.at(1), Some((0, &[0usize][..])));
        assert_eq!(a.at(2), Some((0, &[0usize][..])));
        assert_eq!(a.at(3), Some((1, &[0usize, 2][..])));
    }

    #[test]
    fn unmatched_pixels_stay_unassigned() {
        let rs = parse_rules_with(TABLE3_RULES, &table3_groups(), &vocab()).unwrap();
        let mut ctx = cloudy_tp_context(&[0.1, 0.1]);
        ctx.masks.insert("cloud".into(), Mask2D::new(1, 2, vec![0, 1]).unwrap());
        let a = assign_references(&rs, &ctx).unwrap();
        assert_eq!(a.at(0), None);
        assert!(a.at(1).is_some());
        assert_eq!(a.assigned_count(), 1);
    }

    #[test]
    fn missing_context_and_dims() {
        let rs = parse_rules_with(TABLE3_RULES, &table3_groups(), &vocab()).unwrap();
        let mut ctx = cloudy_tp_context(&[0.1]);
        ctx.bands.clear();
        assert_eq!(
            assign_references(&rs, &ctx),
            Err(RuleError::MissingContext("band nir".into()))
        );
        let mut ctx = cloudy_tp_context(&[0.1, 0.2]);
        ctx.masks.insert("cloud".into(), Mask2D::filled(2, 1, 1));
        assert!(matches!(
            assign_references_sized(&rs, &ctx, 1, 2),
            Err(RuleError::DimMismatch(_))
        ));
    }

    #[test]
    fn pixel_permutation_commutes() {
        let rs = parse_rules_with(TABLE3_RULES, &table3_groups(), &vocab()).unwrap();
        let nir = [0.1, 0.5, 0.3, 0.05, 0.2];
        let perm = [3, 0, 4, 1, 2];
        let a = assign_references(&rs, &cloudy_tp_context(&nir)).unwrap();
        let permuted: Vec<f32> = perm.iter().map(|&i| nir[i]).collect();
        let b = assign_references(&rs, &cloudy_tp_context(&permuted)).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(a.at(i), b.at(j));
        }
    }
}
