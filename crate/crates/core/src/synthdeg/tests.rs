use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::degrade::mask;
use super::*;
use crate::nets::{GeneratorSpec, Image};

#[test]
fn none_is_identity_and_trg_equals_clean_renders() {
    let g = GeneratorSpec::default();
    let deg = DegradationSpec::new(DegradationKind::None, 0);
    let trg = sample_domain(&g, 10, Domain::Trg, &deg, 4).unwrap();
    for r in &trg.records {
        let clean = g.generate(r.latent.as_ref().unwrap()).unwrap();
        assert_eq!(r.image, clean);
    }
    assert!(sample_domain(&g, 0, Domain::Src, &deg, 4).is_err());
}

#[test]
fn same_seed_same_dataset() {
    let g = GeneratorSpec::default();
    let deg = DegradationSpec::new(DegradationKind::Rain, 0);
    let a = sample_domain(&g, 20, Domain::Trg, &deg, 11).unwrap();
    let b = sample_domain(&g, 20, Domain::Trg, &deg, 11).unwrap();
    assert_eq!(a, b);
    let c = sample_domain(&g, 20, Domain::Trg, &deg, 12).unwrap();
    assert_ne!(a, c);
}

#[test]
fn training_latent_streams_are_disjoint() {
    let g = GeneratorSpec::default();
    let deg = DegradationSpec::new(DegradationKind::Mask, 0);
    let src = sample_domain(&g, 300, Domain::Src, &deg, 5).unwrap();
    let trg = sample_domain(&g, 300, Domain::Trg, &deg, 5).unwrap();
    for s in &src.records {
        let ws = s.latent.as_ref().unwrap();
        assert!(trg.records.iter().all(|t| t.latent.as_ref().unwrap() != ws));
    }
}

#[test]
fn mask_on_black_is_unchanged_and_downsample_keeps_constants() {
    let black = Image::constant(16, 0.0).unwrap();
    for seed in 0..20 {
        let out = degrade(&black, &DegradationSpec::new(DegradationKind::Mask, seed)).unwrap();
        assert_eq!(out, black);
    }
    let grey = Image::constant(16, 0.37).unwrap();
    let out = degrade(&grey, &DegradationSpec::new(DegradationKind::Downsample, 0)).unwrap();
    for p in out.pixels() {
        assert!((p - 0.37).abs() < 1e-15);
    }
    let mut odd = DegradationSpec::new(DegradationKind::Downsample, 0);
    odd.params.downsample.factor = 3;
    assert!(degrade(&grey, &odd).is_err());
}

#[test]
fn mask_coverage_band() {
    let x = Image::constant(16, 0.5).unwrap();
    let p = DegradationParams::default().mask;
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 0.0;
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, cov) = mask(&x, &p, &mut rng).unwrap();
        let frac = cov.iter().filter(|&&c| c).count() as f64 / cov.len() as f64;
        lo = lo.min(frac);
        hi = hi.max(frac);
    }
    assert!(lo >= 0.05 && hi <= 0.5, "coverage range [{lo}, {hi}]");
}

#[test]
fn degradations_change_non_constant_images() {
    let g = GeneratorSpec::default();
    let src = sample_domain(
        &g,
        100,
        Domain::Src,
        &DegradationSpec::new(DegradationKind::None, 0),
        2,
    )
    .unwrap();
    for kind in [
        DegradationKind::Rain,
        DegradationKind::Mask,
        DegradationKind::Downsample,
    ] {
        let changed = src
            .records
            .iter()
            .enumerate()
            .filter(|(i, r)| {
                degrade(&r.image, &DegradationSpec::new(kind, *i as u64)).unwrap() != r.image
            })
            .count();
        assert!(changed >= 99, "{kind}: {changed}/100 changed");
    }
}

#[test]
fn unknown_kind_is_rejected() {
    assert!("blur".parse::<DegradationKind>().is_err());
    assert_eq!(
        "mask".parse::<DegradationKind>().unwrap(),
        DegradationKind::Mask
    );
}

#[test]
fn manifest_roundtrip_quantizes_pixels_only() {
    let g = GeneratorSpec::default();
    let deg = DegradationSpec::new(DegradationKind::Mask, 0);
    let mut ds = sample_paired(&g, 6, &deg, 9).unwrap();
    ds.records[1].latent = None;
    let dir = tempfile::tempdir().unwrap();
    let back = manifest_roundtrip(&ds, dir.path()).unwrap();
    assert_eq!(back.len(), ds.len());
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert_eq!(manifest.lines().count(), ds.len() + 1);
    for (a, b) in ds.records.iter().zip(&back.records) {
        assert_eq!(a.filename, b.filename);
        assert_eq!(a.domain, b.domain);
        assert_eq!(
            (a.deg_kind, a.deg_seed, a.paired),
            (b.deg_kind, b.deg_seed, b.paired)
        );
        assert_eq!(a.latent, b.latent);
        for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
            assert!((p - q).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }
}

#[test]
fn malformed_manifest_reports_row() {
    let g = GeneratorSpec::default();
    let deg = DegradationSpec::new(DegradationKind::Rain, 0);
    let ds = sample_domain(&g, 3, Domain::Trg, &deg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replacen("trg_00001.pgm,trg,rain", "trg_00001.pgm,trg,smoke", 1);
    std::fs::write(&path, broken).unwrap();
    match read_dataset(dir.path()) {
        Err(crate::Error::Manifest { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected manifest error, got {other:?}"),
    }
}
