#![no_main]

use gvgs_core::io::mono::decode_meta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Err(e) = decode_meta(data) {
        assert!(e.offset <= data.len());
    }
});
