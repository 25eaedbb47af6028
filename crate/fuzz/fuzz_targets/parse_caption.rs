#![no_main]

use libfuzzer_sys::fuzz_target;
use ppk_core::consistency::{parse_caption, parse_number};
use ppk_core::text::tokenize;
use ppk_core::CategoryRegistry;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let tokens = tokenize(text);
    for t in &tokens {
        let _ = parse_number(t);
    }
    let _ = parse_caption(&tokens, &CategoryRegistry::fine_grip());
});
