mod common;

use common::brute_force_miou;
use edaseg::metrics::{confusion_update, miou, ConfusionMatrix};
use edaseg::rng::derive_seed;
use edaseg::synth::{
    generate_dataset, generate_scene, read_dataset, render_clean, render_prediction, write_dataset, ClassId, Sample,
    SceneConfig, COLORMAP,
};
use edaseg::train::{augment_sample, class_weights, flip_horizontal, translate};
use edaseg::SplitMix64;

fn class_counts(label: &[u8]) -> [usize; 6] {
    let mut c = [0; 6];
    for &v in label {
        c[v as usize] += 1;
    }
    c
}

#[test]
fn every_scene_has_road_and_two_lane_classes() {
    let cfg = SceneConfig::desk();
    for seed in 0..100 {
        let s = generate_scene(seed, &cfg).unwrap();
        let c = class_counts(&s.label);
        assert!(c[1] * 100 >= s.label.len(), "seed {seed}: road share too small");
        assert!(c[2..].iter().filter(|&&n| n > 0).count() >= 2, "seed {seed}: {c:?}");
    }
}

#[test]
fn class_frequencies_over_many_scenes() {
    let cfg = SceneConfig::desk();
    let mut present = [0usize; 6];
    let mut pixels = [0usize; 6];
    for seed in 0..1000 {
        let c = class_counts(&generate_scene(seed, &cfg).unwrap().label);
        for k in 0..6 {
            present[k] += (c[k] > 0) as usize;
            pixels[k] += c[k];
        }
    }
    assert!(pixels[2..].iter().all(|&p| p < pixels[1]), "{pixels:?}");
    for k in 2..6 {
        assert!(present[k] >= 100, "class {k} appears in only {} scenes", present[k]);
    }
}

#[test]
fn clean_image_and_label_agree() {
    let cfg = SceneConfig::desk();
    for seed in 0..50 {
        let clean = render_clean(seed, &cfg).unwrap();
        let noisy = generate_scene(seed, &cfg).unwrap();
        assert_eq!(clean.label, noisy.label, "noise must not touch labels");
        let rendered = render_prediction(&clean.label).unwrap();
        for (p, px) in clean.image.chunks_exact(3).enumerate() {
            let l = clean.label[p];
            if let Some(c) = COLORMAP[2..].iter().position(|c| c == px) {
                assert_eq!(l as usize, c + 2, "seed {seed} pixel {p}");
            }
            if l >= 2 {
                assert_eq!(px, &rendered[3 * p..3 * p + 3]);
                assert_eq!(px, ClassId::from_u8(l).unwrap().color());
            }
        }
    }
}

#[test]
fn per_sample_seeds_are_order_independent() {
    let cfg = SceneConfig::with_size(48, 32);
    let set = generate_dataset(77, 10, &cfg).unwrap();
    assert_eq!(set[7], generate_scene(derive_seed(77, 7), &cfg).unwrap());
    assert_eq!(set[7].seed, derive_seed(77, 7));
}

#[test]
fn dataset_round_trip_and_full_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let set = generate_dataset(5, 6, &SceneConfig::desk()).unwrap();
    write_dataset(dir.path(), &set).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), set);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.trim(), "6 144 96");

    let full = tempfile::tempdir().unwrap();
    write_dataset(full.path(), &generate_dataset(1, 1, &SceneConfig::full()).unwrap()).unwrap();
    let back = read_dataset(full.path()).unwrap();
    assert_eq!((back[0].height, back[0].width), (480, 720));
}

#[test]
fn dataset_errors() {
    let set = generate_dataset(5, 3, &SceneConfig::with_size(16, 16)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &set).unwrap();
    std::fs::remove_file(dir.path().join("labels/000001.pgm")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("mismatch"), "{err}");
    std::fs::remove_file(dir.path().join("images/000001.ppm")).unwrap();
    std::fs::write(dir.path().join("images/000009.ppm"), b"").unwrap();
    std::fs::write(dir.path().join("labels/000009.pgm"), b"").unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("000001"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let mut bad = set.clone();
    bad[2].label[0] = 9;
    write_dataset(dir.path(), &bad).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("000002") && err.contains('9'), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &set).unwrap();
    std::fs::write(dir.path().join("manifest.txt"), "4 16 16\n").unwrap();
    assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("mismatch"));
}

#[test]
fn miou_matches_set_oracle() {
    let mut rng = SplitMix64::new(31);
    for _ in 0..100 {
        let truth: Vec<u8> = (0..256).map(|_| rng.below(6) as u8).collect();
        let pred: Vec<u8> = (0..256).map(|_| rng.below(6) as u8).collect();
        let mut cm = ConfusionMatrix::new();
        confusion_update(&mut cm, &pred, &truth).unwrap();
        assert_eq!(miou(&cm), brute_force_miou(&pred, &truth));
    }
}

fn marker_sample() -> Sample {
    let (w, h) = (9, 7);
    let mut s = Sample {
        width: w,
        height: h,
        image: vec![90; w * h * 3],
        label: vec![1; w * h],
        seed: 0,
    };
    let p = 3 * w + 4;
    s.label[p] = 5;
    s.image[3 * p..3 * p + 3].copy_from_slice(&[255, 255, 255]);
    s
}

#[test]
fn augmentation_moves_image_and_label_together() {
    let s = marker_sample();
    assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
    let mut rng = SplitMix64::new(4);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..400 {
        let a = augment_sample(&s, &mut rng);
        let p = a.label.iter().position(|&v| v == 5).expect("centre marker never leaves the frame");
        assert_eq!(&a.image[3 * p..3 * p + 3], &[255, 255, 255]);
        let (y, x) = ((p / 9) as i64, (p % 9) as i64);
        let dy = y - 3;
        let dx_plain = x - 4;
        let dx_flip = x - (8 - 4);
        assert!((-2..=2).contains(&dy));
        assert!((-2..=2).contains(&dx_plain) || (-2..=2).contains(&dx_flip));
        seen.insert((dx_plain, dy));
        // relabels nothing: every class count can only shrink at the borders
        let (before, after) = (class_counts(&s.label), class_counts(&a.label));
        assert!((1..6).all(|k| after[k] <= before[k]));
        assert_eq!(a.label.iter().filter(|&&v| v == 0).count(), a.image.chunks(3).filter(|px| px == &[0, 0, 0]).count());
    }
    assert_eq!(seen.len(), 25, "all offsets in -2..=2 on both axes are reachable");
    assert_eq!(translate(&s, 9, 0).label, vec![0; 63]);
}

#[test]
fn class_weights_from_a_dataset() {
    let set = generate_dataset(3, 8, &SceneConfig::desk()).unwrap();
    let w = class_weights(&set).unwrap();
    assert_eq!(w[0], 0.0);
    assert!(w[2..].iter().all(|&x| x > w[1]), "lanes are rarer than road: {w:?}");
    assert!(w[1..].iter().all(|&x| x <= 1.0 / 1.02f64.ln() + 1e-12));
}
