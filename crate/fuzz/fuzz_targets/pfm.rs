#![no_main]

use gvgs_core::io::pfm::{decode_pfm, encode_pfm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    match decode_pfm(data) {
        Ok(map) => {
            let again = decode_pfm(&encode_pfm(&map)).expect("re-encoded PFM decodes");
            assert_eq!(again.dims(), map.dims());
        }
        Err(e) => assert!(e.offset <= data.len()),
    }
});
