#![no_main]

use handseg::io::{decode_depth_png, encode_depth_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(depth) = decode_depth_png(data) {
        let bytes = encode_depth_png(&depth).unwrap();
        assert_eq!(decode_depth_png(&bytes).unwrap(), depth);
    }
});
