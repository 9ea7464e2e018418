use proptest::prelude::*;
use threer::image::{
    ar_filter_field, bicubic_downscale_x2, bicubic_kernel, generate_corpus, load_png,
    random_crop_flip, read_manifest, save_png, synthesize_grain, synthetic_clean_image,
    write_manifest, CorpusSpec, GrainConfig, Image, ManifestEntry, Split, TrainingPair, BICUBIC_A,
};

fn ramp(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |c, y, x| ((x + 2 * y + c) as f32 / 16.0).min(1.0))
}

#[test]
fn ramp_downscale_matches_separable_oracle() {
    let img = ramp(4, 4);
    let out = bicubic_downscale_x2(&img).unwrap();
    // Each output sample sits between input pixels 2i and 2i+1; eight taps at
    // distances (k - (2i + 0.5)) / 2, edge-clamped.
    let weight = |i: usize, k: isize| {
        bicubic_kernel((k as f64 - (2 * i) as f64 - 0.5) / 2.0, BICUBIC_A) / 2.0
    };
    for c in 0..3 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut acc = 0.0;
                for ky in (2 * oy as isize - 3)..(2 * oy as isize + 5) {
                    for kx in (2 * ox as isize - 3)..(2 * ox as isize + 5) {
                        let sy = ky.clamp(0, 3) as usize;
                        let sx = kx.clamp(0, 3) as usize;
                        acc += weight(oy, ky) * weight(ox, kx) * img.get(c, sy, sx) as f64;
                    }
                }
                assert!((out.get(c, oy, ox) as f64 - acc.clamp(0.0, 1.0)).abs() < 1e-6);
            }
        }
    }
}

proptest! {
    #[test]
    fn downscale_commutes_with_flips(seed in 0u64..1000, w2 in 2usize..6, h2 in 2usize..6) {
        let img = synthetic_clean_image(2 * w2, 2 * h2, seed);
        let a = bicubic_downscale_x2(&img.flip_horizontal()).unwrap();
        let b = bicubic_downscale_x2(&img).unwrap().flip_horizontal();
        prop_assert!(a.max_abs_diff(&b) <= 1e-6);
        let a = bicubic_downscale_x2(&img.flip_vertical()).unwrap();
        let b = bicubic_downscale_x2(&img).unwrap().flip_vertical();
        prop_assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn png_round_trip_within_half_step(seed in 0u64..1000) {
        let img = synthetic_clean_image(6, 4, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        prop_assert!(back.max_abs_diff(&img) <= 1.0 / 510.0 + 1e-7);
    }

    #[test]
    fn pairs_keep_the_half_scale_relation(seed in 0u64..200) {
        let clean = synthetic_clean_image(20, 18, seed);
        let grainy = synthesize_grain(&clean, &GrainConfig::preset(2, seed)).unwrap();
        let pair = TrainingPair::new(grainy, clean).unwrap();
        let crop = random_crop_flip(&pair, 12, seed).unwrap();
        prop_assert_eq!(crop.grainy_hr.dims(), (12, 12));
        prop_assert_eq!(crop.clean_hr.dims(), (12, 12));
        prop_assert_eq!(crop.clean_lr.dims(), (6, 6));
        prop_assert_eq!(crop.clean_lr, bicubic_downscale_x2(&crop.clean_hr).unwrap());
    }
}

#[test]
fn zero_intensity_leaves_image_untouched() {
    let clean = synthetic_clean_image(16, 16, 3);
    let cfg = GrainConfig {
        ar_coefficients: vec![0.1, 0.2, 0.1, 0.3],
        intensity: vec![0.0; 5],
        seed: 4,
    };
    assert_eq!(synthesize_grain(&clean, &cfg).unwrap(), clean);
}

#[test]
fn grain_is_deterministic_and_seed_dependent() {
    let clean = synthetic_clean_image(16, 16, 3);
    let a = synthesize_grain(&clean, &GrainConfig::preset(2, 11)).unwrap();
    let b = synthesize_grain(&clean, &GrainConfig::preset(2, 11)).unwrap();
    let c = synthesize_grain(&clean, &GrainConfig::preset(2, 12)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, clean);
}

#[test]
fn ar1_field_has_stationary_variance() {
    // Only the left neighbour is active: x_t = phi x_{t-1} + e_t along rows.
    let phi = 0.6;
    let field = ar_filter_field(512, 512, &[0.0, 0.0, 0.0, phi], 77).unwrap();
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let expected = 1.0 / (1.0 - phi * phi);
    assert!(
        (var / expected - 1.0).abs() < 0.05,
        "variance {var} vs {expected}"
    );
}

#[test]
fn crop_of_constant_is_constant() {
    let img = Image::filled(160, 150, [0.25, 0.5, 0.75]);
    let pair = TrainingPair::new(img.clone(), img).unwrap();
    let crop = random_crop_flip(&pair, 144, 1).unwrap();
    assert_eq!(crop.clean_hr, Image::filled(144, 144, [0.25, 0.5, 0.75]));
    assert_eq!(crop.clean_lr.dims(), (72, 72));
}

#[test]
fn crop_is_reproducible_and_flips_are_involutions() {
    let clean = synthetic_clean_image(40, 36, 9);
    let pair = TrainingPair::new(clean.clone(), clean).unwrap();
    let a = random_crop_flip(&pair, 16, 5).unwrap();
    let b = random_crop_flip(&pair, 16, 5).unwrap();
    assert_eq!(a, b);
    let twice = a
        .clean_hr
        .flip_horizontal()
        .flip_vertical()
        .flip_vertical()
        .flip_horizontal();
    assert_eq!(twice, a.clean_hr);
}

#[test]
fn crop_larger_than_image_fails() {
    let img = Image::filled(100, 200, [0.0; 3]);
    let pair = TrainingPair::new(img.clone(), img).unwrap();
    let err = random_crop_flip(&pair, 144, 0).unwrap_err();
    assert!(err.to_string().contains("smaller"), "{err}");
}

#[test]
fn mismatched_pair_is_rejected() {
    let a = Image::filled(8, 8, [0.0; 3]);
    let b = Image::filled(8, 10, [0.0; 3]);
    assert!(TrainingPair::new(a, b).is_err());
}

#[test]
fn manifest_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tsv");
    let entries = vec![
        ManifestEntry {
            clean: dir.path().join("a_clean.png"),
            grainy: dir.path().join("a_grainy.png"),
            split: Split::Train,
        },
        ManifestEntry {
            clean: dir.path().join("sub/b_clean.png"),
            grainy: dir.path().join("sub/b_grainy.png"),
            split: Split::Test,
        },
    ];
    write_manifest(&path, &entries).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(
        text.starts_with("a_clean.png\ta_grainy.png\ttrain\n"),
        "{text}"
    );
    assert_eq!(read_manifest(&path).unwrap(), entries);

    std::fs::write(&path, "a.png\tb.png\ttrain\nc.png\td.png\tvalid\n").unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(err.to_string().starts_with("manifest line 2"), "{err}");
}

#[test]
fn corpus_on_disk_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        count: 3,
        width: 16,
        height: 12,
        grain_levels: vec![1, 3],
        ar_coefficients: None,
        test_every: 3,
        seed: 5,
    };
    let entries = generate_corpus(&spec, dir.path()).unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[2].split, Split::Test);
    let listed = read_manifest(&dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(listed, entries);
    let pair = listed[0].load().unwrap();
    assert_eq!(pair.clean_lr.dims(), (8, 6));
    let mem = spec.pairs().unwrap();
    assert!(pair.clean_hr.max_abs_diff(&mem[0].0.clean_hr) <= 1.0 / 510.0 + 1e-7);
}
