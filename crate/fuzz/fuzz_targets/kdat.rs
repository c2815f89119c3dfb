#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::io::{decode_kdat, encode_kdat};

fuzz_target!(|data: &[u8]| {
    if let Ok(y) = decode_kdat(data) {
        assert_eq!(encode_kdat(&y).unwrap(), data);
    }
});
