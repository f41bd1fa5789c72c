//! Replays the checked-in fuzz corpus and byte-level mutations of it through
//! every decoder. Decoders must return errors, never panic, and report
//! offsets inside the input.

use std::path::PathBuf;

use gvgs_core::io::cameras::{decode_cameras, encode_cameras};
use gvgs_core::io::config::{parse_config, serialize_config, ConfigSyntax};
use gvgs_core::io::mono::decode_meta;
use gvgs_core::io::pfm::{decode_pfm, encode_pfm};
use gvgs_core::io::ply::{decode_gaussians, decode_mesh, decode_ply, encode_ply};
use gvgs_core::io::png::{decode_mask, decode_rgb};
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds for {target}");
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn check_pfm(data: &[u8]) -> bool {
    match decode_pfm(data) {
        Ok(map) => {
            assert_eq!(decode_pfm(&encode_pfm(&map)).unwrap().dims(), map.dims());
            true
        }
        Err(e) => {
            assert!(e.offset <= data.len());
            false
        }
    }
}

fn check_ply(data: &[u8]) -> bool {
    let _ = decode_gaussians(data);
    let _ = decode_mesh(data);
    match decode_ply(data) {
        Ok(ply) => {
            assert_eq!(decode_ply(&encode_ply(&ply)).unwrap().elements.len(), ply.elements.len());
            true
        }
        Err(e) => {
            assert!(e.offset <= data.len());
            false
        }
    }
}

fn check_cameras(data: &[u8]) -> bool {
    match decode_cameras(data) {
        Ok(views) => {
            assert_eq!(decode_cameras(encode_cameras(&views).as_bytes()).unwrap().len(), views.len());
            true
        }
        Err(_) => false,
    }
}

fn check_config(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    let mut any = false;
    for syntax in [ConfigSyntax::Toml, ConfigSyntax::Json] {
        match parse_config(text, syntax) {
            Ok(map) => {
                assert_eq!(parse_config(&serialize_config(&map), ConfigSyntax::Toml).unwrap(), map);
                any = true;
            }
            Err(e) => assert!(e.offset <= text.len()),
        }
    }
    any
}

fn check_png(data: &[u8]) -> bool {
    let _ = decode_mask(data);
    match decode_rgb(data) {
        Ok(_) => true,
        Err(e) => {
            assert!(e.offset <= data.len());
            false
        }
    }
}

fn check_meta(data: &[u8]) -> bool {
    match decode_meta(data) {
        Ok(_) => true,
        Err(e) => {
            assert!(e.offset <= data.len());
            false
        }
    }
}

const TARGETS: [(&str, fn(&[u8]) -> bool); 6] = [
    ("pfm", check_pfm),
    ("ply", check_ply),
    ("cameras", check_cameras),
    ("config", check_config),
    ("png", check_png),
    ("mono_meta", check_meta),
];

#[test]
fn every_target_has_accepted_and_rejected_seeds() {
    for (target, check) in TARGETS {
        let results: Vec<bool> = seeds(target).iter().map(|s| check(s)).collect();
        assert!(results.iter().any(|ok| *ok), "{target}: no seed decodes");
        if target != "png" && target != "config" {
            assert!(results.iter().any(|ok| !ok), "{target}: no seed exercises an error path");
        }
    }
}

#[test]
fn truncated_seeds_never_panic() {
    for (target, check) in TARGETS {
        for seed in seeds(target) {
            for cut in 0..seed.len().min(600) {
                check(&seed[..cut]);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Edit {
    Flip(usize, u8),
    Insert(usize, u8),
    Delete(usize),
}

fn apply(mut data: Vec<u8>, edits: &[Edit]) -> Vec<u8> {
    for e in edits {
        let n = data.len().max(1);
        match *e {
            Edit::Flip(i, b) if !data.is_empty() => data[i % n] ^= b,
            Edit::Insert(i, b) => data.insert(i % (data.len() + 1), b),
            Edit::Delete(i) if !data.is_empty() => {
                data.remove(i % n);
            }
            _ => {}
        }
    }
    data
}

fn edit() -> impl Strategy<Value = Edit> {
    prop_oneof![
        (any::<usize>(), 1u8..).prop_map(|(i, b)| Edit::Flip(i, b)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Edit::Insert(i, b)),
        any::<usize>().prop_map(Edit::Delete),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn mutated_seeds_never_panic(target in 0..TARGETS.len(), pick in any::<usize>(), edits in prop::collection::vec(edit(), 1..6)) {
        let (name, check) = TARGETS[target];
        let all = seeds(name);
        check(&apply(all[pick % all.len()].clone(), &edits));
    }
}
