//! Rational and decimal literals: parsing never panics, and whatever parses
//! survives a format/parse round trip.

#![no_main]

use idsq::rational::{format_rational, parse_rational};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(x) = parse_rational(text) {
        let back = parse_rational(&format_rational(&x)).expect("formatted rational parses");
        assert_eq!(back, x);
    }
});
