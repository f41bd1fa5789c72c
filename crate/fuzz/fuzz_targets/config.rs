#![no_main]

use gvgs_core::io::config::{parse_config, serialize_config, ConfigSyntax};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for syntax in [ConfigSyntax::Toml, ConfigSyntax::Json] {
        match parse_config(text, syntax) {
            Ok(map) => {
                let again = parse_config(&serialize_config(&map), ConfigSyntax::Toml).expect("serialized config parses");
                assert_eq!(again.len(), map.len());
            }
            Err(e) => assert!(e.offset <= text.len()),
        }
    }
});
