use bgshift_core::exec::ExecMode;
use bgshift_core::harness::{run_experiment, ExperimentConfig, RunReport, REPORT_FILE};
use bgshift_core::scenario::{
    build_schedule, generate_synthetic, load_dataset, split_disjoint, split_overlapped, write_dataset, ClassOrder,
    SyntheticConfig,
};

fn corpus(seed: u64, n: usize) -> Vec<bgshift_core::scenario::Sample> {
    let cfg = SyntheticConfig { num_fg_classes: 3, num_images: n, height: 16, width: 16, ..Default::default() };
    generate_synthetic(seed, &cfg).unwrap()
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(1, 12);
    write_dataset(dir.path(), &samples, 3).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        // 8-bit storage quantizes pixel values
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn overlapped_steps_cover_disjoint_steps() {
    let samples = corpus(2, 60);
    let schedule = build_schedule(3, &[1, 1, 1], ClassOrder::Permuted(5)).unwrap();
    let d = split_disjoint(&samples, &schedule).unwrap();
    let o = split_overlapped(&samples, &schedule).unwrap();
    for (ds, os) in d.steps.iter().zip(&o.steps) {
        assert!(ds.ids.iter().all(|id| os.ids.contains(id)));
        assert_eq!(ds.shift.future_pixels, 0);
    }
    assert_eq!(d.excluded, o.excluded);
}

#[test]
fn experiment_on_a_directory_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (train, eval) = (dir.path().join("train"), dir.path().join("eval"));
    write_dataset(&train, &corpus(3, 24), 3).unwrap();
    write_dataset(&eval, &corpus(4, 8), 3).unwrap();
    let out = dir.path().join("run");
    let text = format!(
        r#"
schedule = [2, 1]
methods = ["FT", "ILT", "MiB"]
seeds = [0]
out = {:?}
[dataset]
source = "dir"
num_fg_classes = 3
train_dir = {:?}
eval_dir = {:?}
[train]
epochs_per_step = 1
"#,
        out.display().to_string(),
        train.display().to_string(),
        eval.display().to_string()
    );
    let cfg = ExperimentConfig::parse(&text, &[]).unwrap();
    let report = run_experiment(&cfg, ExecMode::Sequential).unwrap();
    assert!(!report.has_failures());
    let loaded = RunReport::load(&out.join(REPORT_FILE)).unwrap();
    assert_eq!(loaded.cells.len(), 6);
    assert!(loaded.final_mean("ILT").unwrap().all.is_some());
}
