#![no_main]

use adage::groups::parse_groups_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(g) = parse_groups_config(text) {
            let covered: usize = g.groups().iter().map(|x| x.members.len()).sum();
            assert_eq!(covered, g.total_channels());
        }
    }
});
