#![no_main]

use idsq::matrix_criteria::SquareMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(m) = SquareMatrix::from_json(&text) {
        assert_eq!(SquareMatrix::from_json(&m.to_json()).as_ref(), Ok(&m));
    }
});
