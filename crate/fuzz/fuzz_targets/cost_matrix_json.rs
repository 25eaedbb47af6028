#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_core::matching::{hungarian, CostMatrix};

fuzz_target!(|data: &[u8]| {
    if let Ok(cost) = CostMatrix::from_json(data) {
        let _ = hungarian(&cost);
    }
});
