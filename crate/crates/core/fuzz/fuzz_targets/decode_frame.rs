#![no_main]

use adage::backend::protocol::{decode_frame, encode_frame};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((frame, used)) = decode_frame(data) {
        assert!(used <= data.len());
        // re-encoding normalizes the JSON, so decode once more and compare
        let again = encode_frame(&frame);
        let (back, n) = decode_frame(&again).expect("own encoding decodes");
        assert_eq!(n, again.len());
        assert_eq!(back, frame);
    }
});
