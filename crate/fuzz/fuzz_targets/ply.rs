#![no_main]

use gvgs_core::io::ply::{decode_gaussians, decode_mesh, decode_ply, encode_ply};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    match decode_ply(data) {
        Ok(ply) => {
            let again = decode_ply(&encode_ply(&ply)).expect("re-encoded PLY decodes");
            assert_eq!(again.elements.len(), ply.elements.len());
        }
        Err(e) => assert!(e.offset <= data.len()),
    }
    let _ = decode_gaussians(data);
    let _ = decode_mesh(data);
});
