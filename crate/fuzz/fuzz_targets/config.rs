#![no_main]

use bundlecodec::trainer::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = TrainConfig::from_json(data) {
        // accepted configs survive a round trip
        let again = TrainConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again.to_json(), cfg.to_json());
    }
});
