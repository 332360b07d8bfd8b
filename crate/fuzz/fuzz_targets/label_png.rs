#![no_main]

use handseg::io::{decode_label_png, encode_label_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = decode_label_png(data) {
        assert!(labels.classes().iter().all(|&v| v <= 2));
        let bytes = encode_label_png(&labels).unwrap();
        assert_eq!(decode_label_png(&bytes).unwrap(), labels);
    }
});
