use super::*;
use crate::rng::rng_for;
use rand::Rng as _;

fn sample(id: &str, labels: Vec<ClassId>) -> Sample {
    let n = labels.len();
    Sample {
        id: id.into(),
        image: Tensor::zeros(&[1, n, 3]),
        mask: Mask::new(1, n, labels).unwrap(),
    }
}

#[test]
fn schedules_by_index() {
    let s = build_schedule(20, &[19, 1], ClassOrder::Index).unwrap();
    assert_eq!(s.new_classes(0), (1..=19).collect::<Vec<ClassId>>().as_slice());
    assert_eq!(s.new_classes(1), &[20]);
    let s = build_schedule(20, &[15, 1, 1, 1, 1, 1], ClassOrder::Index).unwrap();
    assert_eq!(s.num_steps(), 6);
    assert_eq!(s.new_classes(5), &[20]);
    assert_eq!(s.old_classes(5).len(), 20);
    let s = build_schedule(5, &[5], ClassOrder::Index).unwrap();
    assert_eq!(s.num_steps(), 1);
    assert!(s.context(0).unwrap().is_none());
    assert!(matches!(build_schedule(5, &[3, 1], ClassOrder::Index), Err(Error::ScheduleViolation(_))));
}

#[test]
fn permuted_schedule_is_a_seeded_partition() {
    let a = build_schedule(10, &[4, 3, 3], ClassOrder::Permuted(7)).unwrap();
    let b = build_schedule(10, &[4, 3, 3], ClassOrder::Permuted(7)).unwrap();
    assert_eq!(a, b);
    let mut all: Vec<ClassId> = a.steps().iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (1..=10).collect::<Vec<_>>());
    assert_eq!(a.merged().num_steps(), 1);
}

#[test]
fn context_matches_schedule() {
    let s = build_schedule(4, &[2, 2], ClassOrder::Index).unwrap();
    let ctx = s.context(1).unwrap().unwrap();
    assert_eq!(ctx.old_classes, vec![0, 1, 2]);
    assert_eq!(ctx.new_classes, vec![0, 3, 4]);
}

#[test]
fn relabel_cases() {
    let bg = Mask::filled(2, 2, 0);
    assert_eq!(relabel(&bg, &[0, 2], 0), bg);
    let m = Mask::new(1, 4, vec![1, 1, 2, 2]).unwrap();
    assert_eq!(relabel(&m, &[0, 2], 0).labels(), &[0, 0, 2, 2]);
    let mut rng = rng_for(3, &[]);
    for _ in 0..20 {
        let m = Mask::new(4, 4, (0..16).map(|_| rng.gen_range(0..6)).collect()).unwrap();
        let keep = [0, 2, 5];
        let r = relabel(&m, &keep, 0);
        for (a, b) in m.labels().iter().zip(r.labels()) {
            assert_eq!(*b, if keep.contains(a) { *a } else { 0 });
        }
        assert_eq!(relabel(&r, &keep, 0), r);
    }
}

#[test]
fn disjoint_rule_on_two_images() {
    let s = build_schedule(2, &[1, 1], ClassOrder::Index).unwrap();
    let corpus = vec![sample("a", vec![0, 1]), sample("b", vec![1, 2]), sample("c", vec![0, 0])];
    let split = split_disjoint(&corpus, &s).unwrap();
    assert_eq!(split.steps[0].ids, vec!["a"]);
    assert_eq!(split.steps[1].ids, vec!["b"]);
    assert_eq!(split.steps[1].samples[0].1.labels(), &[0, 2]);
    assert_eq!(split.excluded, vec!["c"]);
    assert_eq!(split.steps[1].shift, BackgroundShift { old_pixels: 1, future_pixels: 0 });
}

#[test]
fn overlapped_rule_on_two_images() {
    let s = build_schedule(2, &[1, 1], ClassOrder::Index).unwrap();
    let corpus = vec![sample("a", vec![0, 1]), sample("b", vec![1, 2])];
    let split = split_overlapped(&corpus, &s).unwrap();
    assert_eq!(split.steps[0].ids, vec!["a", "b"]);
    assert_eq!(split.steps[1].ids, vec!["b"]);
    assert_eq!(split.steps[0].samples[1].1.labels(), &[1, 0]);
    assert_eq!(split.steps[1].samples[0].1.labels(), &[0, 2]);
    assert_eq!(split.steps[0].shift.future_pixels, 1);
}

#[test]
fn unknown_labels_are_rejected() {
    let s = build_schedule(2, &[1, 1], ClassOrder::Index).unwrap();
    let corpus = vec![sample("a", vec![0, 9])];
    assert!(matches!(split_overlapped(&corpus, &s), Err(Error::LabelDomain(_))));
}

fn small_cfg() -> SyntheticConfig {
    SyntheticConfig {
        num_fg_classes: 5,
        num_images: 40,
        height: 16,
        width: 16,
        blobs_per_image: 2,
    }
}

#[test]
fn split_invariants_on_synthetic_corpus() {
    let corpus = generate_synthetic(1, &small_cfg()).unwrap();
    let s = build_schedule(5, &[2, 2, 1], ClassOrder::Permuted(3)).unwrap();
    for kind in [SplitKind::Disjoint, SplitKind::Overlapped] {
        let split = split(&corpus, &s, kind).unwrap();
        for (t, step) in split.steps.iter().enumerate() {
            let fg = s.new_classes(t);
            let mut shift = BackgroundShift::default();
            for ((_, mask), id) in step.samples.iter().zip(&step.ids) {
                assert!(mask.labels().iter().all(|l| step.visible_classes.contains(l)));
                assert!(mask.labels().iter().any(|l| fg.contains(l)));
                let full = &corpus.iter().find(|c| &c.id == id).unwrap().mask;
                for &l in full.labels() {
                    if l != 0 && !fg.contains(&l) {
                        if s.seen_classes(t).contains(&l) {
                            shift.old_pixels += 1;
                        } else {
                            shift.future_pixels += 1;
                        }
                    }
                }
            }
            assert_eq!(shift, step.shift);
            if kind == SplitKind::Overlapped {
                let expect: Vec<&String> = corpus
                    .iter()
                    .filter(|c| c.mask.labels().iter().any(|l| fg.contains(l)))
                    .map(|c| &c.id)
                    .collect();
                assert_eq!(step.ids.iter().collect::<Vec<_>>(), expect);
            }
        }
        if kind == SplitKind::Disjoint {
            let mut ids: Vec<&String> = split.steps.iter().flat_map(|s| &s.ids).collect();
            let n = ids.len();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), n);
        } else {
            assert!(split.excluded.is_empty());
        }
    }
}

#[test]
fn synthetic_is_deterministic_and_balanced() {
    let cfg = SyntheticConfig {
        num_images: 100,
        ..small_cfg()
    };
    let a = generate_synthetic(0, &cfg).unwrap();
    let b = generate_synthetic(0, &cfg).unwrap();
    assert_eq!(a.len(), 100);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.image, y.image);
        assert_eq!(x.mask, y.mask);
    }
    for c in 1..=5 {
        assert!(a.iter().filter(|s| s.mask.contains(c)).count() >= 10);
    }
    let one = generate_synthetic(
        4,
        &SyntheticConfig {
            num_fg_classes: 1,
            blobs_per_image: 1,
            ..small_cfg()
        },
    )
    .unwrap();
    assert!(one.iter().all(|s| s.mask.labels().iter().all(|&l| l <= 1)));
}

#[test]
fn infeasible_synthetic_configs() {
    let tiny = SyntheticConfig { height: 8, ..small_cfg() };
    assert!(matches!(generate_synthetic(0, &tiny), Err(Error::Generation(_))));
    let crowded = SyntheticConfig {
        num_fg_classes: 20,
        blobs_per_image: 12,
        ..small_cfg()
    };
    assert!(matches!(generate_synthetic(0, &crowded), Err(Error::Generation(_))));
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(2, &SyntheticConfig { num_images: 10, ..small_cfg() }).unwrap();
    write_dataset(dir.path(), &corpus, 5).unwrap();
    let head = std::fs::read(dir.path().join("img00000.ppm")).unwrap();
    assert_eq!(&head[..2], b"P6");
    let head = std::fs::read(dir.path().join("img00000.pgm")).unwrap();
    assert_eq!(&head[..2], b"P5");
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 10);
    for (a, b) in corpus.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn ingestion_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(MANIFEST), "classes=5\n").unwrap();
    assert!(load_dataset(dir.path()).unwrap().is_empty());

    let corpus = vec![Sample {
        id: "x".into(),
        image: Tensor::zeros(&[2, 2, 3]),
        mask: Mask::new(2, 2, vec![0, 7, 0, 0]).unwrap(),
    }];
    write_dataset(dir.path(), &corpus, 5).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Ingestion { path, .. }) => assert!(path.ends_with("x.pgm")),
        other => panic!("expected an ingestion error, got {other:?}"),
    }

    std::fs::write(dir.path().join(MANIFEST), "classes=5\ny y.ppm y.pgm\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Ingestion { .. })));
    std::fs::write(dir.path().join("x.ppm"), b"P6\nbad").unwrap();
    std::fs::write(dir.path().join(MANIFEST), "classes=9\nx x.ppm x.pgm\n").unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Ingestion { path, .. }) => assert!(path.ends_with("x.ppm")),
        other => panic!("expected an ingestion error, got {other:?}"),
    }
}
