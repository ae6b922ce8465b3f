#![no_main]

use idsq::model::{normalize, GaussianProblem};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(p) = GaussianProblem::from_json(&text) {
        assert_eq!(GaussianProblem::from_json(&p.to_json()).as_ref(), Ok(&p));
        let _ = normalize(&p);
    }
});
