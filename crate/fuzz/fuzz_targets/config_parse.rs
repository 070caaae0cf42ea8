#![no_main]

use eal::{Overrides, RawConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(raw) = RawConfig::parse(text) else { return };
    if let Ok(cfg) = raw.resolve(&Overrides::default()) {
        // A resolved config always hashes and round-trips through JSON.
        assert_eq!(cfg.hash().len(), 16);
        let back: eal::ExperimentConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }
});
