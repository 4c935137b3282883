//! Experiment configuration, orchestration over methods and seeds, and the
//! JSON and CSV reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, GroupReport};
use crate::exec::ExecMode;
use crate::labels::ClassId;
use crate::losses::MethodConfig;
use crate::rng::{derive_seed, stream};
use crate::scenario::{
    build_schedule, generate_synthetic, load_dataset, split, BackgroundShift, ClassOrder, LabelSchedule, Sample,
    SplitKind, StepDataset, SyntheticConfig,
};
use crate::trainer::{prior_for, run_step, StepResult, TrainConfig};
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const MIOU_FILE: &str = "miou.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Differences below this many mIoU points count as ties.
pub const TIE_POINTS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub num_fg_classes: usize,
    pub train_images: usize,
    pub eval_images: usize,
    pub height: usize,
    pub width: usize,
    pub blobs_per_image: usize,
    /// Used when `source = "dir"`.
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            num_fg_classes: 5,
            train_images: 200,
            eval_images: 50,
            height: 64,
            width: 64,
            blobs_per_image: 2,
            train_dir: None,
            eval_dir: None,
        }
    }
}

impl DatasetSpec {
    fn synthetic(&self, num_images: usize) -> SyntheticConfig {
        SyntheticConfig {
            num_fg_classes: self.num_fg_classes,
            num_images,
            height: self.height,
            width: self.width,
            blobs_per_image: self.blobs_per_image,
        }
    }

    /// Train and evaluation corpora for one seed. Synthetic corpora differ per
    /// seed; directory corpora do not.
    pub fn load(&self, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
        match self.source {
            DataSource::Synthetic => Ok((
                generate_synthetic(derive_seed(seed, &[stream::TRAIN_DATA]), &self.synthetic(self.train_images))?,
                generate_synthetic(derive_seed(seed, &[stream::EVAL_DATA]), &self.synthetic(self.eval_images))?,
            )),
            DataSource::Dir => {
                let dir = |d: &Option<PathBuf>, what: &str| {
                    d.clone()
                        .ok_or_else(|| Error::Config(format!("dataset.{what} is required for directory datasets")))
                };
                Ok((
                    load_dataset(&dir(&self.train_dir, "train_dir")?)?,
                    load_dataset(&dir(&self.eval_dir, "eval_dir")?)?,
                ))
            }
        }
    }
}

fn overlapped() -> SplitKind {
    SplitKind::Overlapped
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    /// Number of classes added at each step.
    pub schedule: Vec<usize>,
    #[serde(default)]
    pub class_order: ClassOrder,
    #[serde(default = "overlapped")]
    pub split: SplitKind,
    /// Method names, optionally `Name@weight`.
    pub methods: Vec<String>,
    /// Root seeds; each replaces `train.seed` in its cells.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "yes")]
    pub checkpoints: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn parse_value(v: &str) -> toml::Value {
    if let Some(x) = format!("v = {v}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")) {
        return x;
    }
    if v.contains(',') {
        return toml::Value::Array(v.split(',').map(|p| parse_value(p.trim())).collect());
    }
    toml::Value::String(v.to_string())
}

fn set_path(root: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    let last = parts[parts.len() - 1];
    let mut v = parse_value(value);
    if matches!(table.get(last), Some(toml::Value::Array(_))) && !v.is_array() {
        v = toml::Value::Array(vec![v]);
    }
    table.insert(last.to_string(), v);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, then applies `key=value` overrides whose dotted keys
    /// address nested fields and whose values are TOML literals (bare text is
    /// taken as a string, comma lists as arrays).
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            set_path(&mut root, k, v)?;
        }
        let cfg: Self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn label_schedule(&self) -> Result<LabelSchedule> {
        build_schedule(self.dataset.num_fg_classes, &self.schedule, self.class_order)
    }

    pub fn method_configs(&self) -> Result<Vec<MethodConfig>> {
        self.methods.iter().map(|m| MethodConfig::from_spec(m)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one method and one seed".into()));
        }
        let mut names = self.methods.clone();
        names.sort();
        names.dedup();
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if names.len() != self.methods.len() || seeds.len() != self.seeds.len() {
            return Err(Error::Config("methods and seeds must not repeat".into()));
        }
        self.method_configs()?;
        self.label_schedule()?;
        self.train.validate()?;
        let d = &self.dataset;
        match d.source {
            DataSource::Synthetic if d.train_images == 0 || d.eval_images == 0 => {
                Err(Error::Config("synthetic corpora need train and eval images".into()))
            }
            DataSource::Dir if d.train_dir.is_none() || d.eval_dir.is_none() => {
                Err(Error::Config("directory datasets need train_dir and eval_dir".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean IoU of the classes added at each step; background is in group 0.
    pub groups: Vec<Option<f64>>,
    pub all: Option<f64>,
    pub all_fg: Option<f64>,
}

impl Metrics {
    fn from_groups(g: &GroupReport) -> Self {
        Self {
            groups: g.groups.clone(),
            all: g.all,
            all_fg: g.all_fg,
        }
    }

    /// `(name, value)` pairs in column order.
    pub fn named(&self) -> Vec<(String, Option<f64>)> {
        let mut out: Vec<(String, Option<f64>)> =
            self.groups.iter().enumerate().map(|(i, v)| (format!("g{i}"), *v)).collect();
        out.push(("all".into(), self.all));
        out.push(("all_fg".into(), self.all_fg));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: String,
    pub seed: u64,
    pub step: usize,
    pub error: Option<String>,
    pub metrics: Option<Metrics>,
    pub per_class: Vec<(ClassId, Option<f64>)>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub train_images: usize,
    pub shift: BackgroundShift,
    pub seconds: f64,
    /// Step 0 taken from an earlier method of the same seed.
    pub shared: bool,
}

impl CellReport {
    fn failed(method: &str, seed: u64, step: usize, error: String) -> Self {
        Self {
            method: method.to_string(),
            seed,
            step,
            error: Some(error),
            metrics: None,
            per_class: Vec::new(),
            loss_trace: Vec::new(),
            iterations: 0,
            train_images: 0,
            shift: BackgroundShift::default(),
            seconds: 0.0,
            shared: false,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub step: usize,
    /// Successful seeds averaged.
    pub seeds: usize,
    pub mean: Metrics,
    /// Sample standard deviation, 0 for a single seed.
    pub std: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub schedule: LabelSchedule,
    pub cells: Vec<CellReport>,
    pub aggregates: Vec<Aggregate>,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        self.cells.iter().any(|c| !c.ok())
    }

    pub fn cell(&self, method: &str, seed: u64, step: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.seed == seed && c.step == step)
    }

    pub fn aggregate(&self, method: &str, step: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.step == step)
    }

    /// Seed-mean metrics of `method` after the last step.
    pub fn final_mean(&self, method: &str) -> Option<&Metrics> {
        self.aggregate(method, self.schedule.num_steps() - 1).map(|a| &a.mean)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

struct SeedContext<'a> {
    config: &'a ExperimentConfig,
    schedule: &'a LabelSchedule,
    seed: u64,
    cfg: TrainConfig,
    train: &'a [Sample],
    eval: &'a [Sample],
    mode: ExecMode,
}

impl SeedContext<'_> {
    fn checkpoint(&self, method: &str, result: &StepResult, t: usize) -> Result<()> {
        let Some(out) = &self.config.out else { return Ok(()) };
        if !self.config.checkpoints {
            return Ok(());
        }
        let dir = out.join(CHECKPOINT_DIR).join(slug(method)).join(format!("seed{}", self.seed));
        fs::create_dir_all(&dir).map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
        result.model.save(&dir.join(format!("step{t}.model")))?;
        if let Some(prior) = &result.prior {
            prior.save(&dir.join(format!("step{t}.importance")))?;
        }
        Ok(())
    }

    fn ok_cell(&self, method: &str, result: &StepResult, data: &StepDataset, eval: &GroupReport) -> CellReport {
        CellReport {
            method: method.to_string(),
            seed: self.seed,
            step: eval.groups.len() - 1,
            error: None,
            metrics: Some(Metrics::from_groups(eval)),
            per_class: eval.per_class.clone(),
            loss_trace: result.loss_trace.clone(),
            iterations: result.iterations,
            train_images: data.len(),
            shift: data.shift,
            seconds: 0.0,
            shared: false,
        }
    }

    fn run_joint(&self, method: &MethodConfig) -> CellReport {
        let last = self.schedule.num_steps() - 1;
        let start = Instant::now();
        let merged = self.schedule.merged();
        let run = || -> Result<CellReport> {
            let parts = split(self.train, &merged, self.config.split)?;
            let data = &parts.steps[0];
            let result = run_step(None, data, &merged, method, &self.cfg, self.mode)?;
            let eval = evaluate(&result.model, self.eval, self.schedule, last, self.mode)?;
            self.checkpoint(&method.name, &result, last)?;
            let mut cell = self.ok_cell(&method.name, &result, data, &eval);
            cell.seconds = start.elapsed().as_secs_f64();
            Ok(cell)
        };
        run().unwrap_or_else(|e| CellReport::failed(&method.name, self.seed, last, e.to_string()))
    }

    fn run_incremental(&self, method: &MethodConfig, step0: &mut Option<std::result::Result<StepResult, String>>) -> Vec<CellReport> {
        let n = self.schedule.num_steps();
        let parts = match split(self.train, self.schedule, self.config.split) {
            Ok(p) => p,
            Err(e) => return (0..n).map(|t| CellReport::failed(&method.name, self.seed, t, e.to_string())).collect(),
        };
        let mut cells = Vec::with_capacity(n);
        let mut prev: Option<StepResult> = None;
        for data in &parts.steps {
            let t = data.step;
            let start = Instant::now();
            let text = |e: Error| e.to_string();
            let outcome = (|| -> std::result::Result<CellReport, String> {
                let (mut result, shared) = if t == 0 {
                    let shared = step0.is_some();
                    let cached = step0.get_or_insert_with(|| {
                        run_step(None, data, self.schedule, method, &self.cfg, self.mode).map_err(text)
                    });
                    (cached.clone()?, shared)
                } else {
                    (run_step(prev.as_ref(), data, self.schedule, method, &self.cfg, self.mode).map_err(text)?, false)
                };
                if t == 0 {
                    result.prior = prior_for(method, &result, data, &self.cfg, self.mode).map_err(text)?;
                }
                let eval = evaluate(&result.model, self.eval, self.schedule, t, self.mode).map_err(text)?;
                self.checkpoint(&method.name, &result, t).map_err(text)?;
                let mut cell = self.ok_cell(&method.name, &result, data, &eval);
                cell.seconds = start.elapsed().as_secs_f64();
                cell.shared = shared;
                prev = Some(result);
                Ok(cell)
            })();
            match outcome {
                Ok(cell) => cells.push(cell),
                Err(msg) => {
                    cells.extend((t..n).map(|s| {
                        let why = if s == t { msg.clone() } else { format!("step {t} failed: {msg}") };
                        CellReport::failed(&method.name, self.seed, s, why)
                    }));
                    break;
                }
            }
        }
        cells
    }
}

fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let xs: Vec<f64> = values.iter().flatten().copied().collect();
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn aggregate(cells: &[CellReport], methods: &[String], steps: usize) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for m in methods {
        for t in 0..steps {
            let ok: Vec<&Metrics> = cells
                .iter()
                .filter(|c| &c.method == m && c.step == t)
                .filter_map(|c| c.metrics.as_ref())
                .collect();
            if ok.is_empty() {
                continue;
            }
            let column = |f: &dyn Fn(&Metrics) -> Option<f64>| mean_std(&ok.iter().map(|x| f(x)).collect::<Vec<_>>());
            let ngroups = ok[0].groups.len();
            let groups: Vec<_> = (0..ngroups).map(|g| column(&|x| x.groups.get(g).copied().flatten())).collect();
            let all = column(&|x| x.all);
            let all_fg = column(&|x| x.all_fg);
            out.push(Aggregate {
                method: m.clone(),
                step: t,
                seeds: ok.len(),
                mean: Metrics {
                    groups: groups.iter().map(|g| g.0).collect(),
                    all: all.0,
                    all_fg: all_fg.0,
                },
                std: Metrics {
                    groups: groups.iter().map(|g| g.1).collect(),
                    all: all.1,
                    all_fg: all_fg.1,
                },
            });
        }
    }
    out
}

/// Trains every (method, seed) cell and evaluates after each step. Step 0 is
/// trained once per seed and shared by all incremental methods. Joint trains
/// once on the merged schedule and is scored with the original step groups.
/// Cell failures are recorded and the run carries on. Writes the report, the
/// mIoU table and checkpoints when `config.out` is set.
pub fn run_experiment(config: &ExperimentConfig, mode: ExecMode) -> Result<RunReport> {
    config.validate()?;
    let schedule = config.label_schedule()?;
    let methods = config.method_configs()?;
    if let Some(out) = &config.out {
        fs::create_dir_all(out)?;
    }
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        let (train, eval) = match config.dataset.load(seed) {
            Ok(c) => c,
            Err(e) => {
                for m in &methods {
                    let steps = if m.joint { vec![schedule.num_steps() - 1] } else { (0..schedule.num_steps()).collect() };
                    cells.extend(steps.into_iter().map(|t| CellReport::failed(&m.name, seed, t, e.to_string())));
                }
                continue;
            }
        };
        let ctx = SeedContext {
            config,
            schedule: &schedule,
            seed,
            cfg: TrainConfig { seed, ..config.train.clone() },
            train: &train,
            eval: &eval,
            mode,
        };
        let mut step0 = None;
        for m in &methods {
            if m.joint {
                cells.push(ctx.run_joint(m));
            } else {
                cells.extend(ctx.run_incremental(m, &mut step0));
            }
        }
    }
    let order = |c: &CellReport| {
        (
            config.methods.iter().position(|m| *m == c.method),
            config.seeds.iter().position(|s| *s == c.seed),
            c.step,
        )
    };
    cells.sort_by_key(order);
    let report = RunReport {
        config: config.clone(),
        aggregates: aggregate(&cells, &config.methods, schedule.num_steps()),
        schedule,
        cells,
    };
    if let Some(out) = &config.out {
        write_report(&report, out)?;
    }
    Ok(report)
}

pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(report)?)?;
    fs::write(dir.join(MIOU_FILE), miou_csv(report)?)?;
    Ok(())
}

/// `v` with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = (5 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.decimals$}")
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| sig6(100.0 * x)).unwrap_or_default()
}

/// Final-step mIoU table in percent: one row per (method, seed), then mean
/// and standard deviation rows per method.
pub fn miou_csv(report: &RunReport) -> Result<String> {
    let last = report.schedule.num_steps() - 1;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "seed".into(), "step".into()];
    header.extend((0..=last).map(|g| format!("g{g}")));
    header.extend(["all".into(), "all_fg".into(), "status".into()]);
    w.write_record(&header)?;
    let blank = (0..last + 3).map(|_| String::new());
    for m in &report.config.methods {
        for &seed in &report.config.seeds {
            let mut row = vec![m.clone(), seed.to_string(), last.to_string()];
            match report.cell(m, seed, last) {
                Some(CellReport { metrics: Some(x), .. }) => {
                    row.extend(x.named().into_iter().map(|(_, v)| pct(v)));
                    row.push("ok".into());
                }
                _ => {
                    row.extend(blank.clone());
                    row.push("failed".into());
                }
            }
            w.write_record(&row)?;
        }
        if let Some(a) = report.aggregate(m, last) {
            for (label, x) in [("mean", &a.mean), ("std", &a.std)] {
                let mut row = vec![m.clone(), label.to_string(), last.to_string()];
                row.extend(x.named().into_iter().map(|(_, v)| pct(v)));
                row.push(format!("n={}", a.seeds));
                w.write_record(&row)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub method: String,
    pub seed: String,
    pub step: usize,
    pub values: Vec<Option<f64>>,
    pub status: String,
}

pub fn parse_miou_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let n = rec.len();
        if n < 5 {
            return Err(Error::InvalidInput(format!("short mIoU row {rec:?}")));
        }
        let values = (3..n - 1)
            .map(|i| match &rec[i] {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::InvalidInput(format!("bad value {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(CsvRow {
            method: rec[0].to_string(),
            seed: rec[1].to_string(),
            step: rec[2].parse().map_err(|_| Error::InvalidInput(format!("bad step {:?}", &rec[2])))?,
            values,
            status: rec[n - 1].to_string(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering3 {
    TargetHigher,
    BaselineHigher,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub step: usize,
    pub metric: String,
    /// Seed means, in percent.
    pub baseline: f64,
    pub target: f64,
    pub verdict: Ordering3,
}

/// Seed-averaged verdicts for every metric at every step both methods report.
pub fn compare_report(report: &RunReport, baseline: &str, target: &str) -> Result<Vec<Verdict>> {
    let steps: Vec<usize> = (0..report.schedule.num_steps())
        .filter(|&t| {
            report.cells.iter().any(|c| c.method == baseline && c.step == t)
                && report.cells.iter().any(|c| c.method == target && c.step == t)
        })
        .collect();
    if steps.is_empty() {
        return Err(Error::Comparison(format!("no common cells for {baseline} and {target}")));
    }
    let mut out = Vec::new();
    for t in steps {
        let named = |m: &str, seed: u64| -> Result<Vec<(String, Option<f64>)>> {
            report
                .cell(m, seed, t)
                .and_then(|c| c.metrics.as_ref())
                .map(Metrics::named)
                .ok_or_else(|| Error::Comparison(format!("{m} has no result for seed {seed} at step {t}")))
        };
        let mut sums: Vec<(String, f64, f64)> = Vec::new();
        for &seed in &report.config.seeds {
            let (b, g) = (named(baseline, seed)?, named(target, seed)?);
            if sums.is_empty() {
                sums = b.iter().map(|(k, _)| (k.clone(), 0.0, 0.0)).collect();
            }
            for ((slot, (k, bv)), (_, tv)) in sums.iter_mut().zip(&b).zip(&g) {
                let (Some(bv), Some(tv)) = (bv, tv) else {
                    return Err(Error::Comparison(format!("{k} undefined for seed {seed} at step {t}")));
                };
                slot.1 += bv;
                slot.2 += tv;
            }
        }
        let n = report.config.seeds.len() as f64;
        for (metric, b, g) in sums {
            let (b, g) = (100.0 * b / n, 100.0 * g / n);
            let verdict = if (g - b).abs() < TIE_POINTS {
                Ordering3::Tie
            } else if g > b {
                Ordering3::TargetHigher
            } else {
                Ordering3::BaselineHigher
            };
            out.push(Verdict {
                step: t,
                metric,
                baseline: b,
                target: g,
                verdict,
            });
        }
    }
    Ok(out)
}

/// Plain-text table of seed means and standard deviations, in percent.
pub fn format_table(report: &RunReport) -> String {
    let mut s = String::new();
    for a in &report.aggregates {
        let cols: Vec<String> = a
            .mean
            .named()
            .into_iter()
            .zip(a.std.named())
            .map(|((k, m), (_, d))| match (m, d) {
                (Some(m), Some(d)) => format!("{k} {:.1}±{:.1}", 100.0 * m, 100.0 * d),
                _ => format!("{k} -"),
            })
            .collect();
        s.push_str(&format!("{:<12} step {} (n={})  {}\n", a.method, a.step, a.seeds, cols.join("  ")));
    }
    for c in report.cells.iter().filter(|c| !c.ok()) {
        s.push_str(&format!(
            "FAILED {} seed {} step {}: {}\n",
            c.method,
            c.seed,
            c.step,
            c.error.as_deref().unwrap_or("")
        ));
    }
    s
}
