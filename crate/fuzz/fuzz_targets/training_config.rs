#![no_main]

use libfuzzer_sys::fuzz_target;
use qsurv::training::TrainingConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = TrainingConfig::from_json(text) {
        config.validate().unwrap();
        let again = TrainingConfig::from_json(&config.to_json().unwrap()).unwrap();
        assert_eq!(again.k_nodes, config.k_nodes);
        assert_eq!(again.hidden, config.hidden);
    }
});
