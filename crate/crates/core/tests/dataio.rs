use std::fs;
use std::path::Path;

use ndarray::{Array, Array2, Array3};
use proptest::prelude::*;
use uar_core::dataio::{
    export_float_map, import_float_map, load_paired_dir, preview_path, save_image, LoadIssue,
    PairedLayout,
};
use uar_core::Error;

fn gradient_image(h: usize, w: usize, phase: f64) -> Array3<f64> {
    Array::from_shape_fn((h, w, 3), |(j, k, c)| {
        ((j as f64 * 0.1 + k as f64 * 0.07 + c as f64 * 0.3 + phase).sin() * 0.5 + 0.5).clamp(0.0, 1.0)
    })
}

fn write_pair_dirs(root: &Path) {
    fs::create_dir_all(root.join("A")).unwrap();
    fs::create_dir_all(root.join("B")).unwrap();
}

#[test]
fn empty_directory_loads_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_paired_dir(dir.path(), &PairedLayout::default()).unwrap();
    assert!(ds.samples.is_empty());
    assert!(ds.issues.is_empty());
}

#[test]
fn matched_pairs_and_orphans() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_pair_dirs(root);
    for (i, name) in ["c.png", "a.png", "b.png"].iter().enumerate() {
        save_image(&gradient_image(8, 6, i as f64), &root.join("A").join(name)).unwrap();
        save_image(&gradient_image(8, 6, 1.0 + i as f64), &root.join("B").join(name)).unwrap();
    }
    save_image(&gradient_image(8, 6, 0.0), &root.join("A").join("orphan.png")).unwrap();

    let ds = load_paired_dir(root, &PairedLayout::default()).unwrap();
    let ids: Vec<_> = ds.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["a.png", "b.png", "c.png"]);
    assert_eq!(ds.issues, vec![LoadIssue::MissingTarget { name: "orphan.png".into() }]);
    for s in &ds.samples {
        assert_eq!(s.x_a.dim(), (8, 6, 3));
        assert!(s.x_a.iter().chain(s.x_b.iter()).all(|v| (0.0..=1.0).contains(v)));
    }
    // 8-bit quantization only.
    let back = &ds.samples[1].x_a;
    let orig = gradient_image(8, 6, 2.0);
    assert!(back.iter().zip(orig.iter()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-9));

    let again = load_paired_dir(root, &PairedLayout::default()).unwrap();
    assert_eq!(again, ds);
}

#[test]
fn size_mismatch_and_missing_source_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_pair_dirs(root);
    save_image(&gradient_image(8, 8, 0.0), &root.join("A/x.png")).unwrap();
    save_image(&gradient_image(8, 9, 0.0), &root.join("B/x.png")).unwrap();
    save_image(&gradient_image(8, 8, 0.0), &root.join("B/y.png")).unwrap();
    let ds = load_paired_dir(root, &PairedLayout::default()).unwrap();
    assert!(ds.samples.is_empty());
    assert_eq!(ds.issues.len(), 2);
    assert!(matches!(ds.issues[0], LoadIssue::SizeMismatch { .. }));
    assert_eq!(ds.issues[1], LoadIssue::MissingSource { name: "y.png".into() });
}

#[test]
fn unreadable_image_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_pair_dirs(root);
    fs::write(root.join("A/bad.png"), b"not a png").unwrap();
    fs::write(root.join("B/bad.png"), b"not a png").unwrap();
    match load_paired_dir(root, &PairedLayout::default()) {
        Err(Error::Image { path, .. }) => assert!(path.ends_with("A/bad.png")),
        other => panic!("expected image error, got {other:?}"),
    }
}

#[test]
fn float_map_round_trip_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.f32");
    let map = Array::from_shape_fn((7, 5), |(j, k)| (j * 5 + k) as f32 * 0.37 - 3.0);
    export_float_map(&map, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let header = br#"{"h":7,"w":5,"dtype":"f32"}"#;
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes[header.len()], b'\n');
    assert_eq!(bytes.len(), header.len() + 1 + 7 * 5 * 4);
    let back = import_float_map(&path).unwrap();
    assert!(back.iter().zip(map.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let preview = image::open(preview_path(&path)).unwrap();
    assert_eq!((preview.width(), preview.height()), (5, 7));
}

#[test]
fn float_map_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.f32");

    fs::write(&path, b"{\"h\":2,\"w\":2,\"dtype\":\"f32\"}\n\0\0\0\0").unwrap();
    match import_float_map(&path) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 28),
        other => panic!("{other:?}"),
    }

    fs::write(&path, b"{\"h\":2,\"w\":").unwrap();
    assert!(matches!(import_float_map(&path), Err(Error::Format { offset: 11, .. })));

    fs::write(&path, b"{\"h\":2,\"w\":x}\n").unwrap();
    assert!(matches!(import_float_map(&path), Err(Error::Format { .. })));

    fs::write(&path, b"{\"h\":1,\"w\":1,\"dtype\":\"f64\"}\n\0\0\0\0\0\0\0\0").unwrap();
    assert!(matches!(import_float_map(&path), Err(Error::Format { .. })));

    let nan = Array2::from_elem((1, 1), f32::NAN);
    assert!(export_float_map(&nan, &path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn float_map_is_lossless(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<f32>(), 144)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.f32");
        let map = Array2::from_shape_fn((h, w), |(j, k)| {
            let v = bits[j * 12 + k];
            if v.is_finite() { v } else { 0.0 }
        });
        export_float_map(&map, &path).unwrap();
        let back = import_float_map(&path).unwrap();
        prop_assert_eq!(back.dim(), (h, w));
        prop_assert!(back.iter().zip(map.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
