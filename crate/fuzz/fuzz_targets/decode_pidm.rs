#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_core::codec::{decode_pidm, encode_pidm};

fuzz_target!(|data: &[u8]| {
    if let Ok(raster) = decode_pidm(data) {
        assert_eq!(encode_pidm(&raster), data);
    }
});
