#![no_main]

use adage::raster::{decode_tensor, encode_tensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_tensor(data) {
        assert_eq!(encode_tensor(&t), data);
    }
});
