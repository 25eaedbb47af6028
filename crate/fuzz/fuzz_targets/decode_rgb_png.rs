#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_core::codec::{decode_rgb_png, encode_rgb_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(raster) = decode_rgb_png(data) {
        let again = decode_rgb_png(&encode_rgb_png(&raster).unwrap()).unwrap();
        assert_eq!(again, raster);
    }
});
