//! Series dumps: malformed rows are errors, valid tables round-trip.

#![no_main]

use idsq::series_oracle::BivariateSeries;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = BivariateSeries::read_csv(data) {
        let mut buf = Vec::new();
        s.write_csv(&mut buf).expect("write to memory");
        let back = BivariateSeries::read_csv(buf.as_slice()).expect("own dump parses");
        assert_eq!(back, s);
    }
});
