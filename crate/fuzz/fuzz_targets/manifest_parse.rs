#![no_main]

use handseg::io::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        let again = Manifest::parse(&m.to_text()).expect("written manifest parses");
        assert_eq!(m.records(), again.records());
    }
});
