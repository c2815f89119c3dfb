#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::io::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        let again = decode_pgm(&encode_pgm(&img).unwrap()).expect("round trip");
        assert_eq!(again, img);
    }
});
