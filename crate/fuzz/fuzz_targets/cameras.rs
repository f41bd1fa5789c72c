#![no_main]

use gvgs_core::io::cameras::{decode_cameras, encode_cameras};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(views) = decode_cameras(data) {
        let again = decode_cameras(encode_cameras(&views).as_bytes()).expect("re-encoded cameras decode");
        assert_eq!(again.len(), views.len());
    }
});
