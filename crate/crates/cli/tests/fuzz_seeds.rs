use std::fs;
use std::path::PathBuf;

use ppk_autodiff::{decode_checkpoint, encode_checkpoint};
use ppk_core::annotation::AnnotationFile;
use ppk_core::codec::{decode_pidm, decode_png_rgb8, decode_rgb_png, encode_pidm};
use ppk_core::matching::{hungarian, CostMatrix};
use ppk_model::Config;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn every_seed_is_accepted_by_its_target() {
    for (name, b) in seeds("decode_pidm") {
        assert_eq!(encode_pidm(&decode_pidm(&b).unwrap()), b, "{name}");
    }
    for (name, b) in seeds("decode_rgb_png") {
        decode_rgb_png(&b).expect(&name);
    }
    for (name, b) in seeds("decode_image_png") {
        decode_png_rgb8(&b).expect(&name);
    }
    for (name, b) in seeds("annotation_json") {
        AnnotationFile::from_json(&b).expect(&name).registry().expect(&name);
    }
    for (name, b) in seeds("decode_checkpoint") {
        assert_eq!(encode_checkpoint(&decode_checkpoint(&b).expect(&name)), b, "{name}");
    }
    for (name, b) in seeds("cost_matrix_json") {
        hungarian(&CostMatrix::from_json(&b).expect(&name)).expect(&name);
    }
    for (name, b) in seeds("model_config_json") {
        Config::from_json(std::str::from_utf8(&b).unwrap()).expect(&name).validate().expect(&name);
    }
    for (name, b) in seeds("parse_caption") {
        assert!(std::str::from_utf8(&b).is_ok(), "{name}");
    }
}
