use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamdefect::data::{
    augment, index_pairs, load_pairs, make_split, transform_pair, AugmentParams,
};
use siamdefect::synlcd::dataset::MANIFEST_FILE;
use siamdefect::synlcd::{
    build_dataset, builtin_patterns, read_manifest, synthesize_sample, BuildOptions, Split,
};
use siamdefect::{Error, Image, ImagePair, LabelMask};

#[test]
fn built_dataset_loads_with_exact_masks() {
    let dir = tempfile::tempdir().unwrap();
    let patterns = builtin_patterns(32, 32, 2);
    build_dataset(&patterns[..3], dir.path(), &BuildOptions::new(2, 4)).unwrap();
    let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    for split in [Split::Train, Split::Test] {
        let name = if split == Split::Train {
            "train"
        } else {
            "test"
        };
        let pairs = load_pairs(dir.path(), Some(name), 3).unwrap();
        let mut expected: Vec<_> = manifest.iter().filter(|e| e.split == split).collect();
        expected.sort_by(|a, b| a.name.cmp(&b.name));
        assert_eq!(pairs.len(), expected.len());
        for (p, e) in pairs.iter().zip(expected) {
            assert_eq!(p.sample_id, e.name);
            let pattern = &patterns
                .iter()
                .find(|(id, _)| *id == e.spec.pattern_id)
                .unwrap()
                .1;
            let s = synthesize_sample(pattern, &e.spec).unwrap();
            assert_eq!(p.mask, s.mask);
            assert_eq!(p.ng, s.ng.quantized());
            assert_eq!(p.pattern_id, e.spec.pattern_id);
        }
    }
}

fn write_pair(root: &std::path::Path, name: &str, ok_name: Option<&str>, mask: &LabelMask) {
    for sub in ["ng", "ok", "mask"] {
        fs::create_dir_all(root.join(sub)).unwrap();
    }
    let img = Image::filled(mask.width(), mask.height(), [10.0, 20.0, 30.0]);
    img.save_png(&root.join("ng").join(format!("{name}.png")))
        .unwrap();
    if let Some(ok) = ok_name {
        img.save_png(&root.join("ok").join(format!("{ok}.png")))
            .unwrap();
    }
    mask.save_png(&root.join("mask").join(format!("{name}.png")))
        .unwrap();
}

#[test]
fn pairing_order_and_shared_reference() {
    let dir = tempfile::tempdir().unwrap();
    let m = LabelMask::zeros(4, 4);
    write_pair(dir.path(), "b_line_1", Some("b_line_1"), &m);
    write_pair(dir.path(), "a_line_0", None, &m);
    write_pair(dir.path(), "a_abpt_0", None, &m);
    Image::filled(4, 4, [0.0; 3])
        .save_png(&dir.path().join("ok/a.png"))
        .unwrap();
    let idx = index_pairs(dir.path()).unwrap();
    let names: Vec<&str> = idx.iter().map(|p| p.sample_id.as_str()).collect();
    assert_eq!(names, ["a_abpt_0", "a_line_0", "b_line_1"]);
    assert!(idx[0].ok.ends_with("ok/a.png"));
    assert!(idx[2].ok.ends_with("ok/b_line_1.png"));
}

#[test]
fn missing_files_and_bad_labels_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = LabelMask::zeros(4, 4);
    write_pair(dir.path(), "x_line_0", None, &m);
    let err = index_pairs(dir.path()).unwrap_err().to_string();
    assert!(err.contains("x_line_0.png") && err.contains("ok"), "{err}");

    fs::remove_file(dir.path().join("mask/x_line_0.png")).unwrap();
    let err = index_pairs(dir.path()).unwrap_err().to_string();
    assert!(
        err.contains("mask") && err.contains("x_line_0.png"),
        "{err}"
    );

    m.set(1, 1, 3);
    write_pair(dir.path(), "x_line_0", Some("x_line_0"), &m);
    assert!(matches!(
        load_pairs(dir.path(), None, 3),
        Err(Error::Dataset(_))
    ));
    assert!(load_pairs(dir.path(), None, 4).is_ok());
}

#[test]
fn label_fraction_split() {
    let ids: Vec<usize> = (0..100).collect();
    let a = make_split(&ids, 0.10, 9).unwrap();
    assert_eq!(a.labeled.len(), 10);
    assert_eq!(a.unlabeled.len(), 90);
    assert_eq!(a, make_split(&ids, 0.10, 9).unwrap());
    assert!(make_split(&ids, 0.0, 9).unwrap().labeled.is_empty());
}

/// A bright square whose pixels carry class 2, on a dark background with a
/// class-1 stripe.
fn marker_pair() -> ImagePair {
    let (w, h) = (40, 32);
    let inside = |x: usize, y: usize| (10..16).contains(&x) && (12..18).contains(&y);
    let ng = Image::from_fn(
        w,
        h,
        |x, y| if inside(x, y) { [255.0; 3] } else { [0.0; 3] },
    );
    let mut mask = LabelMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if inside(x, y) {
                mask.set(x, y, 2);
            } else if x == 30 {
                mask.set(x, y, 1);
            }
        }
    }
    ImagePair {
        ok: ng.clone(),
        ng,
        mask,
        pattern_id: "m".into(),
        sample_id: "m_mixed_0".into(),
    }
}

#[test]
fn identity_augmentation_only_normalises() {
    let p = marker_pair();
    let s = augment(
        &p,
        [32, 40],
        &AugmentParams::identity(40, 32),
        &[100.0; 3],
        &[50.0; 3],
    );
    assert_eq!(s.mask, p.mask);
    assert_eq!(s.ng.get(&[0, 0, 0]), -2.0);
    assert_eq!(s.ng.get(&[12, 10, 1]), 3.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn augmentation_never_invents_classes_and_keeps_alignment(seed: u64) {
        let p = marker_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AugmentParams::sample(40, 32, &mut rng);
        let (ng, ok, mask) = transform_pair(&p, 40, 32, &params);
        let before: BTreeSet<u8> = p.mask.classes().into_iter().collect();
        let after: BTreeSet<u8> = mask.classes().into_iter().collect();
        prop_assert!(after.is_subset(&before));
        prop_assert_eq!(&ng, &ok);
        for y in 0..32 {
            for x in 0..40 {
                let bright = ng.pixel(x, y)[0];
                if mask.get(x, y) == 2 {
                    prop_assert!(bright > 0.0, "marker label on a dark pixel at ({}, {})", x, y);
                }
                if bright == 255.0 {
                    prop_assert_eq!(mask.get(x, y), 2);
                }
            }
        }
    }
}
