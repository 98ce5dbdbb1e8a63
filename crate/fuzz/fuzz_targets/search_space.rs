#![no_main]

use libfuzzer_sys::fuzz_target;
use qsurv::training::{SearchSpace, TrainingConfig};
use rand_chacha::rand_core::SeedableRng;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(space) = SearchSpace::from_json(text) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let config = space.sample(&TrainingConfig::default(), &mut rng);
        config.validate().unwrap();
    }
});
