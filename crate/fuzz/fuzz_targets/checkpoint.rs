#![no_main]

use libfuzzer_sys::fuzz_target;
use qsurv::autodiff::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(params) = decode_checkpoint(text) {
        let again = decode_checkpoint(&encode_checkpoint(&params).unwrap()).unwrap();
        assert_eq!(again.len(), params.len());
        for (a, b) in again.iter().zip(params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
        }
    }
});
