#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::training::TrainRunConfig;

fuzz_target!(|text: &str| {
    let _ = TrainRunConfig::from_toml(text);
});
