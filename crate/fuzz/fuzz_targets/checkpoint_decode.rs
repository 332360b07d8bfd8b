#![no_main]

use handseg::checkpoint::{decode_tensors, encode_tensors};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_tensors(data) {
        // Values are compared bitwise: NaN payloads must survive too.
        let again = decode_tensors(&encode_tensors(&tensors)).expect("re-encoded checkpoint decodes");
        assert_eq!(tensors.len(), again.len());
        for ((na, ta), (nb, tb)) in tensors.iter().zip(&again) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert!(ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
});
