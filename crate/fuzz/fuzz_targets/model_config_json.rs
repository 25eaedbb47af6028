#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_model::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Config::from_json(text) {
        let _ = c.validate();
    }
});
