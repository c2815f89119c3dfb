#![no_main]

use libfuzzer_sys::fuzz_target;
use wcrr_core::pipeline::ExperimentManifest;

fuzz_target!(|text: &str| {
    if let Ok(m) = ExperimentManifest::from_toml(text) {
        let again = ExperimentManifest::from_toml(&m.to_toml().unwrap()).expect("round trip");
        assert_eq!(again, m);
    }
});
