#![no_main]

use handseg::io::{decode_color_png, encode_color_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(color) = decode_color_png(data) {
        let bytes = encode_color_png(&color).unwrap();
        assert_eq!(decode_color_png(&bytes).unwrap(), color);
    }
});
