#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_core::codec::decode_png_rgb8;

fuzz_target!(|data: &[u8]| {
    if let Ok((w, h, rgb)) = decode_png_rgb8(data) {
        assert_eq!(rgb.len(), w as usize * h as usize * 3);
    }
});
