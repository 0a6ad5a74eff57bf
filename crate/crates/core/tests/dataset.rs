use mtt_core::dataset::{
    build_examples, read_bundle, write_bundle, DatasetManifest, PreparedDataset, DATASET_FORMAT,
    MANIFEST_FILE,
};
use mtt_core::pipeline::{SplitConfig, Timeline, TriExample, WindowSpec};
use mtt_core::synth::{generate, SyntheticSiteSpec};

fn prepared() -> (PreparedDataset, DatasetManifest) {
    let site = generate(&SyntheticSiteSpec {
        seed: 12,
        irrigation_cadence_min: 60,
        ..Default::default()
    })
    .unwrap();
    let raw = build_examples(&site.streams, 86_400, &WindowSpec::default()).unwrap();
    let data = PreparedDataset::new(raw, &SplitConfig::default()).unwrap();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        config_hash: "abc".into(),
        seed: 12,
        interval_s: 86_400,
        window: WindowSpec::default(),
        example_count: data.raw.len(),
        normalizer: data.normalizer.clone(),
        split: data.plan.clone(),
    };
    (data, manifest)
}

fn bitwise_equal(a: &TriExample, b: &TriExample) -> bool {
    a.id == b.id
        && a.row_id == b.row_id
        && a.issue_date == b.issue_date
        && a.target_date == b.target_date
        && a.target_yield.to_bits() == b.target_yield.to_bits()
        && Timeline::ALL.iter().all(|&t| {
            let (x, y) = (a.window(t), b.window(t));
            x.start == y.start
                && x.steps == y.steps
                && x.width == y.width
                && x.values
                    .iter()
                    .zip(&y.values)
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[test]
fn bundle_round_trips() {
    let (data, manifest) = prepared();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), &data, &manifest).unwrap();
    let (back, m) = read_bundle(dir.path()).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(back.plan, data.plan);
    assert_eq!(back.raw.len(), data.raw.len());
    for (a, b) in data.raw.iter().zip(&back.raw) {
        assert!(bitwise_equal(a, b), "{}", a.id);
    }
    for (a, b) in data.normalized.iter().zip(&back.normalized) {
        assert!(bitwise_equal(a, b), "{}", a.id);
    }
}

#[test]
fn inconsistent_bundles_are_rejected() {
    let (data, manifest) = prepared();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(
        dir.path(),
        &data,
        &DatasetManifest {
            example_count: manifest.example_count + 1,
            ..manifest.clone()
        },
    )
    .unwrap();
    assert!(read_bundle(dir.path()).is_err());

    write_bundle(
        dir.path(),
        &data,
        &DatasetManifest {
            format: "other/1".into(),
            ..manifest.clone()
        },
    )
    .unwrap();
    assert!(read_bundle(dir.path()).is_err());

    write_bundle(dir.path(), &data, &manifest).unwrap();
    std::fs::remove_file(dir.path().join("premonition.csv")).unwrap();
    assert!(read_bundle(dir.path()).is_err());
    std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(read_bundle(dir.path()).is_err());
}
