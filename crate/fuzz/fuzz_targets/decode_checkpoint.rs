#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_autodiff::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&tensors)).unwrap();
        assert_eq!(again.len(), tensors.len());
    }
});
