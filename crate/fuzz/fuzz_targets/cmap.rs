#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::io::{decode_cmap, encode_cmap};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = decode_cmap(data) {
        assert_eq!(encode_cmap(&c).unwrap(), data);
    }
});
