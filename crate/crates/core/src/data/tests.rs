use super::*;
use proptest::prelude::*;
use std::io::Write;

fn sizes(n: [usize; 6]) -> SplitSizes {
    SplitSizes {
        teacher_train: n[0],
        teacher_val: n[1],
        student_train: n[2],
        student_val: n[3],
        unlabeled: n[4],
        test: n[5],
    }
}

fn all_ids(b: &DataBundle) -> Vec<usize> {
    let mut ids = Vec::new();
    for (_, s) in b.labeled_sets() {
        ids.extend_from_slice(&s.ids);
    }
    ids.extend_from_slice(&b.unlabeled.ids);
    ids
}

#[test]
fn exact_counts_and_disjoint_ids() {
    let b = generate(&TaskSpec::blobs(2, 2, SplitSizes::uniform(10), 0)).unwrap();
    for (_, s) in b.labeled_sets() {
        assert_eq!(s.len(), 10);
        assert!(s.labels.iter().all(|&y| y < 2));
    }
    assert_eq!(b.unlabeled.len(), 10);
    let mut ids = all_ids(&b);
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 60);
}

#[test]
fn same_seed_same_bundle() {
    let spec = TaskSpec {
        label_noise: 0.2,
        ..TaskSpec::blobs(3, 4, SplitSizes::uniform(17), 5)
    };
    assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    let other = TaskSpec { seed: 6, ..spec.clone() };
    assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
}

fn nearest_centroid_accuracy(train: &LabeledSet, test: &LabeledSet, k: usize) -> f64 {
    let d = train.dim;
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..train.len() {
        counts[train.labels[i]] += 1;
        for j in 0..d {
            centroids[train.labels[i]][j] += train.row(i)[j];
        }
    }
    for c in 0..k {
        for v in &mut centroids[c] {
            *v /= counts[c] as f64;
        }
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let x = test.row(i);
            let best = (0..k)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            best == test.labels[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn well_separated_blobs_are_perfectly_classified_by_nearest_centroid() {
    let spec = TaskSpec {
        separation: 20.0,
        ..TaskSpec::blobs(3, 2, SplitSizes::uniform(60), 0)
    };
    let b = generate(&spec).unwrap();
    assert_eq!(nearest_centroid_accuracy(&b.teacher_train, &b.test, 3), 1.0);
}

#[test]
fn other_families_generate() {
    for family in [Family::ConcentricRings, Family::TwoMoonsGrid] {
        let spec = TaskSpec {
            family,
            ..TaskSpec::blobs(4, 3, SplitSizes::uniform(20), 1)
        };
        let b = generate(&spec).unwrap();
        assert_eq!(b.test.features.len(), 20 * 3);
        assert!(b.test.features.iter().all(|v| v.is_finite()));
    }
    let flat = TaskSpec {
        family: Family::ConcentricRings,
        ..TaskSpec::blobs(2, 1, SplitSizes::uniform(5), 0)
    };
    assert!(generate(&flat).is_err());
}

#[test]
fn label_noise_rate_is_respected() {
    let n = 2000;
    let clean_spec = TaskSpec::blobs(3, 2, sizes([n, n, n, n, 0, 10]), 3);
    let noisy_spec = TaskSpec {
        label_noise: 0.1,
        ..clean_spec.clone()
    };
    let clean = generate(&clean_spec).unwrap();
    let noisy = generate(&noisy_spec).unwrap();
    assert_eq!(clean.teacher_train.features, noisy.teacher_train.features);
    let mut flipped = 0;
    let mut total = 0;
    for (c, z) in [
        (&clean.teacher_train, &noisy.teacher_train),
        (&clean.teacher_val, &noisy.teacher_val),
        (&clean.student_train, &noisy.student_train),
        (&clean.student_val, &noisy.student_val),
    ] {
        flipped += c.labels.iter().zip(&z.labels).filter(|(a, b)| a != b).count();
        total += c.len();
    }
    let rate = flipped as f64 / total as f64;
    assert!((rate - 0.1).abs() <= 0.02, "rate {rate}");
    assert_eq!(clean.test.labels, noisy.test.labels);
}

#[test]
fn empty_unlabeled_pool_is_allowed_but_labeled_splits_are_not() {
    let b = generate(&TaskSpec::blobs(2, 2, sizes([4, 4, 4, 4, 0, 4]), 0)).unwrap();
    assert!(b.unlabeled.is_empty());
    assert!(generate(&TaskSpec::blobs(2, 2, sizes([4, 0, 4, 4, 4, 4]), 0)).is_err());
}

#[test]
fn capacity_and_spec_errors() {
    let huge = TaskSpec::blobs(2, 2, SplitSizes::uniform(MAX_STREAM_LEN), 0);
    assert!(matches!(generate(&huge), Err(DataError::Capacity { .. })));
    let noisy = TaskSpec {
        label_noise: 0.5,
        ..TaskSpec::blobs(2, 2, SplitSizes::uniform(4), 0)
    };
    assert!(matches!(generate(&noisy), Err(DataError::InvalidSpec(_))));
}

#[test]
fn shifted_unlabeled_pool() {
    let base = TaskSpec::blobs(2, 2, SplitSizes::uniform(6), 0);
    let shifted = TaskSpec {
        unlabeled_shift: 5.0,
        ..base.clone()
    };
    let (a, b) = (generate(&base).unwrap(), generate(&shifted).unwrap());
    for (x, y) in a.unlabeled.features.iter().zip(&b.unlabeled.features) {
        assert!((y - x - 5.0).abs() < 1e-12);
    }
    assert_eq!(a.test, b.test);
}

fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path
}

#[test]
fn load_small_labeled_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(&dir, "a.csv", "a,b,label\n1.0,2.0,0\n-3.5,4,1\n0.25,1e-3,2\n");
    let set = load_csv(&p, 3).unwrap().into_labeled().unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.dim, 2);
    assert_eq!(set.labels, vec![0, 1, 2]);
    assert_eq!(set.row(1), &[-3.5, 4.0]);
}

#[test]
fn load_unlabeled_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_file(&dir, "u.csv", "a,b\n1,2\n3,4\n");
    match load_csv(&p, 3).unwrap() {
        Dataset::Unlabeled(u) => {
            assert_eq!(u.len(), 2);
            assert_eq!(u.features, vec![1.0, 2.0, 3.0, 4.0]);
        }
        other => panic!("expected unlabeled, got {other:?}"),
    }
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("arity.csv", "a,b,label\n1,2,0\n1,2\n", 3),
        ("nan.csv", "a,b,label\n1,2,0\n1,2,0\nx,2,1\n", 4),
        ("range.csv", "a,b,label\n1,2,7\n", 2),
    ];
    for (name, body, line) in cases {
        let p = write_file(&dir, name, body);
        match load_csv(&p, 3) {
            Err(DataError::Parse { line: l, .. }) => assert_eq!(l, line, "{name}"),
            other => panic!("{name}: {other:?}"),
        }
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let spec = TaskSpec {
        label_noise: 0.1,
        ..TaskSpec::blobs(3, 3, SplitSizes::uniform(25), 11)
    };
    let b = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let lp = dir.path().join("train.csv");
    write_labeled_csv(&lp, &b.teacher_train).unwrap();
    let back = load_csv(&lp, 3).unwrap().into_labeled().unwrap();
    assert_eq!(back.labels, b.teacher_train.labels);
    for (x, y) in back.features.iter().zip(&b.teacher_train.features) {
        assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        assert_eq!(x.to_bits(), y.to_bits());
    }
    let up = dir.path().join("u.csv");
    write_unlabeled_csv(&up, &b.unlabeled).unwrap();
    assert_eq!(load_csv(&up, 3).unwrap().into_unlabeled().features, b.unlabeled.features);
}

#[test]
fn from_sets_renumbers_ids() {
    let b = generate(&TaskSpec::blobs(2, 2, SplitSizes::uniform(3), 0)).unwrap();
    let mut t = b.teacher_train.clone();
    t.ids = vec![0, 1, 2];
    let mut v = b.teacher_val.clone();
    v.ids = vec![0, 1, 2];
    let rebuilt = DataBundle::from_sets(
        t,
        v,
        b.student_train.clone(),
        b.student_val.clone(),
        b.unlabeled.clone(),
        b.test.clone(),
        2,
    )
    .unwrap();
    let mut ids = all_ids(&rebuilt);
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn splits_disjoint_for_all_seeds(seed in any::<u64>(), n in proptest::array::uniform6(1usize..12)) {
        let spec = TaskSpec::blobs(3, 2, sizes(n), seed);
        let b = generate(&spec).unwrap();
        prop_assert_eq!(b.teacher_train.len(), n[0]);
        prop_assert_eq!(b.teacher_val.len(), n[1]);
        prop_assert_eq!(b.student_train.len(), n[2]);
        prop_assert_eq!(b.student_val.len(), n[3]);
        prop_assert_eq!(b.unlabeled.len(), n[4]);
        prop_assert_eq!(b.test.len(), n[5]);
        let mut ids = all_ids(&b);
        let total = ids.len();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), total);
    }
}
