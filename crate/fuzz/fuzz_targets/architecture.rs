#![no_main]

use libfuzzer_sys::fuzz_target;
use qsurv::model::{Architecture, HazardModel};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(arch) = Architecture::from_json(text) {
        // Keep construction cheap: skip descriptors that would allocate huge layers.
        let width = arch.hidden.iter().copied().max().unwrap_or(0);
        let small = [arch.input_dim, arch.embed_dim, arch.modulation_hidden, arch.lora_rank]
            .iter()
            .all(|&n| n <= 256);
        if small && width <= 256 && arch.hidden.len() <= 8 {
            let _ = HazardModel::new(arch, 0);
        }
    }
});
