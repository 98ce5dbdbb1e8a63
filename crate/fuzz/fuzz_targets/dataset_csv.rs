#![no_main]

use libfuzzer_sys::fuzz_target;
use qsurv::data::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = Dataset::from_csv(data) {
        // Anything accepted must survive a write/read round trip unchanged.
        let mut buf = Vec::new();
        d.to_csv(&mut buf).unwrap();
        assert_eq!(Dataset::from_csv(buf.as_slice()).unwrap(), d);
        assert!(d.records.iter().all(|r| r.time >= 0.0 && r.x.len() == d.dim()));
    }
});
