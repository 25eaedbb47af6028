#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_core::annotation::AnnotationFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = AnnotationFile::from_json(data) {
        let _ = a.registry();
        let _ = a.tokenized_captions();
    }
});
