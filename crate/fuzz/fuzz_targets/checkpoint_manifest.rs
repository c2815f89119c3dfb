#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::io::decode_checkpoint_manifest;

fuzz_target!(|text: &str| {
    let _ = decode_checkpoint_manifest(text);
});
