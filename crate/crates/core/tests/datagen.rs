use std::collections::BTreeSet;

use xcrossnet::datagen::{build_dataset, file_digest, DatagenConfig, DatasetManifest, Split, MANIFEST_FILE};

fn small(seed: u64, whamr_style: bool) -> DatagenConfig {
    DatagenConfig {
        seed,
        speakers: 8,
        train: 6,
        dev: 2,
        test: 4,
        duration: (0.5, 1.0),
        enroll_s: 0.5,
        whamr_style,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&small(1, false), a.path()).unwrap();
    build_dataset(&small(1, false), b.path()).unwrap();
    build_dataset(&small(2, false), c.path()).unwrap();
    let digest = |d: &tempfile::TempDir| file_digest(&d.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
    let m = DatasetManifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
    for e in &m.entries {
        let p = |rel: &str| file_digest(&a.path().join(rel)).unwrap();
        let q = |rel: &str| file_digest(&b.path().join(rel)).unwrap();
        assert_eq!(p(&e.mixture), q(&e.mixture));
        assert_eq!(p(&e.enrollment), q(&e.enrollment));
    }
}

#[test]
fn manifest_reloads_and_splits_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let built = build_dataset(&small(3, false), dir.path()).unwrap();
    let loaded = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(built.entries, loaded.entries);
    let speakers = |s: Split| -> BTreeSet<usize> {
        loaded.split(s).flat_map(|e| [e.speaker_id, e.interferer_id]).collect()
    };
    assert!(speakers(Split::Train).is_disjoint(&speakers(Split::Test)));
    assert!(speakers(Split::Dev).is_subset(&(0..6).collect()));
    for e in &loaded.entries {
        assert_ne!(e.speaker_id, e.interferer_id);
        assert_ne!(e.enroll_utt, e.target_utt);
        assert!((0.0..=5.0).contains(&e.snr_db));
    }
    let s = loaded.load_sample(&loaded.entries[0]).unwrap();
    assert_eq!(s.y.len(), s.s.len());
    assert_eq!(s.a.len(), 4000);
}

#[test]
fn reverberant_entries_record_room_and_noise() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&small(4, true), dir.path()).unwrap();
    for e in &m.entries {
        assert!(e.rir_seed.is_some());
        let n = e.noise_snr_db.unwrap();
        assert!((6.0..12.0).contains(&n));
    }
    let s = m.load_sample(&m.entries[0]).unwrap();
    assert!(s.y.samples.iter().all(|v| v.abs() < 1.0));
}

#[test]
fn too_few_speakers_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatagenConfig {
        speakers: 1,
        ..small(0, false)
    };
    let err = build_dataset(&cfg, dir.path()).unwrap_err().to_string();
    assert!(err.contains("at least 4 speakers"), "{err}");
}
