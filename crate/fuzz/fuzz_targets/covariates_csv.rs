#![no_main]

use libfuzzer_sys::fuzz_target;
use qsurv::data::read_covariates;

fuzz_target!(|data: &[u8]| {
    if let Ok((names, values)) = read_covariates(data) {
        assert!(!names.is_empty());
        assert_eq!(values.len() % names.len(), 0);
        assert!(values.iter().all(|v| v.is_finite()));
    }
});
