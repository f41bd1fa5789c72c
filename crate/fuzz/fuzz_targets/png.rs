#![no_main]

use gvgs_core::io::png::{decode_mask, decode_rgb};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Err(e) = decode_rgb(data) {
        assert!(e.offset <= data.len());
    }
    let _ = decode_mask(data);
});
