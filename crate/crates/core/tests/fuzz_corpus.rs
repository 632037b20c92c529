//! Replays the checked-in fuzz seeds through the same invariants the fuzz
//! targets assert, so the seeds stay meaningful on a stable toolchain.

use std::fs;
use std::path::PathBuf;

use adage::backend::protocol::{decode_frame, encode_frame};
use adage::groups::{parse_groups_config, ChannelGroup, ChannelGroupSet};
use adage::pipeline::parse_manifest;
use adage::raster::{decode_mask, decode_tensor, encode_mask, encode_tensor};
use adage::rules::{parse_rules_with, RuleVocabulary};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn tensor_seeds() {
    let mut ok = 0;
    for (name, data) in seeds("decode_tensor") {
        if let Ok(t) = decode_tensor(&data) {
            assert_eq!(encode_tensor(&t), data, "{name}");
            ok += 1;
        }
    }
    assert!(ok >= 2);
}

#[test]
fn mask_seeds() {
    for (name, data) in seeds("decode_mask") {
        if let Ok(m) = decode_mask(&data) {
            assert_eq!(encode_mask(&m), data, "{name}");
        }
    }
}

#[test]
fn frame_seeds() {
    for (name, data) in seeds("decode_frame") {
        let (frame, used) = decode_frame(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(used, data.len(), "{name}");
        assert_eq!(encode_frame(&frame), data, "{name}");
    }
}

#[test]
fn group_seeds() {
    for (name, data) in seeds("parse_groups") {
        let g = parse_groups_config(std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let covered: usize = g.groups().iter().map(|x| x.members.len()).sum();
        assert_eq!(covered, g.total_channels());
    }
}

#[test]
fn rule_seeds() {
    let groups = ChannelGroupSet::new(
        6,
        vec![
            ChannelGroup::new("SAR", [0, 1]),
            ChannelGroup::new("RGB", [2, 3, 4]),
            ChannelGroup::new("NIR", [5]),
        ],
    )
    .unwrap();
    let vocab = RuleVocabulary {
        class_names: vec!["land".into(), "water".into()],
        class_count: Some(2),
        ..Default::default()
    };
    for (name, data) in seeds("parse_rules") {
        parse_rules_with(std::str::from_utf8(&data).unwrap(), &groups, &vocab)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn manifest_seeds() {
    for (name, data) in seeds("parse_manifest") {
        parse_manifest(std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
