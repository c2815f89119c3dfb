#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::io::{decode_ktrj, encode_ktrj};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_ktrj(data) {
        let again = decode_ktrj(&encode_ktrj(&t).unwrap()).expect("round trip");
        assert_eq!(again, t);
    }
});
