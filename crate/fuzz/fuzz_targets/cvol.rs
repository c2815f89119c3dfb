#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::io::{decode_cvol, encode_cvol};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_cvol(data) {
        let bytes = encode_cvol(&v).expect("decoded volume re-encodes");
        assert_eq!(bytes, data);
    }
});
