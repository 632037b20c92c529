#![no_main]

use adage::groups::{ChannelGroup, ChannelGroupSet};
use adage::rules::{parse_rules_with, RuleVocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let groups = ChannelGroupSet::new(
        6,
        vec![
            ChannelGroup::new("SAR", [0, 1]),
            ChannelGroup::new("RGB", [2, 3, 4]),
            ChannelGroup::new("NIR", [5]),
        ],
    )
    .expect("fixed partition");
    let vocab = RuleVocabulary {
        class_names: vec!["land".into(), "water".into()],
        class_count: Some(2),
        ..Default::default()
    };
    let _ = parse_rules_with(text, &groups, &vocab);
});
