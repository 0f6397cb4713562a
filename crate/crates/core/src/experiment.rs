//! Experiment configuration and the run/sweep drivers behind the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuitlib::{QffnSpec, QfmSpec};
use crate::data::{load_dataset, subsample, FeaturePipeline, ImageSet, PreparedSample, RankPolicy};
use crate::error::{Error, Result};
use crate::model::{HeadSpec, Model, ModelParams, ModelSpec};
use crate::similarity::kernels;
use crate::train::{gradient_estimators, train_run, AdamConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Mnist,
    Fashion,
}

impl Dataset {
    pub fn dir_name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Fashion => "fashion",
        }
    }
}

const SUPPORTED_GRIDS: [(usize, usize); 2] = [(2, 2), (7, 7)];

/// Grid of the sweep command: one cell per (qubits, class set, heads).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub qubits: Vec<usize>,
    pub class_sets: Vec<Vec<u8>>,
    pub heads: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            qubits: (3..=8).collect(),
            class_sets: vec![vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]],
            heads: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    /// Directory holding the four IDX files; defaults to `data/<dataset>`.
    pub data_dir: Option<PathBuf>,
    pub classes: Vec<u8>,
    pub n_qubits: usize,
    pub heads: usize,
    /// One grid per head; defaults to 2x2 for the first head, 7x7 for the second.
    pub head_grids: Option<Vec<(usize, usize)>>,
    pub qfm_layers: usize,
    pub qffn_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seeds: Vec<u64>,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub attention_mode: String,
    pub gradient: String,
    pub pca_rank_policy: RankPolicy,
    pub verify_circuit_path: bool,
    /// Test samples compared when `verify_circuit_path` is set.
    pub verify_samples: usize,
    pub output: PathBuf,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ExperimentConfig {
            dataset: Dataset::Mnist,
            data_dir: None,
            classes: vec![0, 1],
            n_qubits: 4,
            heads: 1,
            head_grids: None,
            qfm_layers: 3,
            qffn_layers: 3,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            seeds: vec![0, 1, 2, 3, 4],
            per_class_train: 512,
            per_class_test: 128,
            attention_mode: "complex".into(),
            gradient: "adjoint".into(),
            pca_rank_policy: RankPolicy::Allow,
            verify_circuit_path: false,
            verify_samples: 4,
            output: PathBuf::from("runs/default"),
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grids(&self) -> Vec<(usize, usize)> {
        self.head_grids
            .clone()
            .unwrap_or_else(|| SUPPORTED_GRIDS.iter().copied().cycle().take(self.heads).collect())
    }

    pub fn data_path(&self) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(|| Path::new("data").join(self.dataset.dir_name()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(field, reason));
        if !(2..=4).contains(&self.classes.len()) {
            return bad("classes", format!("{} entries, expected 2 to 4", self.classes.len()));
        }
        let mut distinct = self.classes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != self.classes.len() || self.classes.iter().any(|&c| c > 9) {
            return bad("classes", "labels must be distinct digits 0-9".into());
        }
        if !(3..=8).contains(&self.n_qubits) {
            return bad("n_qubits", format!("{} outside 3..=8", self.n_qubits));
        }
        if !(1..=2).contains(&self.heads) {
            return bad("heads", format!("{} heads, expected 1 or 2", self.heads));
        }
        let grids = self.grids();
        if grids.len() != self.heads {
            return bad("head_grids", format!("{} grids for {} heads", grids.len(), self.heads));
        }
        if let Some(g) = grids.iter().find(|g| !SUPPORTED_GRIDS.contains(g)) {
            return bad("head_grids", format!("{}x{} unsupported, expected 2x2 or 7x7", g.0, g.1));
        }
        if self.qfm_layers == 0 {
            return bad("qfm_layers", "must be >= 1".into());
        }
        if self.qffn_layers == 0 {
            return bad("qffn_layers", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta1", "moment decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon", "must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.per_class_train == 0 || self.per_class_test == 0 {
            return bad("per_class_train", "per-class sample counts must be >= 1".into());
        }
        if !kernels().contains(&self.attention_mode) {
            return bad("attention_mode", format!("unknown mode `{}`", self.attention_mode));
        }
        if !gradient_estimators().contains(&self.gradient) {
            return bad("gradient", format!("unknown estimator `{}`", self.gradient));
        }
        if self.verify_circuit_path && grids.iter().any(|g| g.0 * g.1 > 8) {
            return bad("verify_circuit_path", "circuit-path verification needs at most 8 patches per head".into());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            heads: self
                .grids()
                .into_iter()
                .map(|g| HeadSpec {
                    patch_grid: g,
                    qfm: QfmSpec::new(self.n_qubits, self.qfm_layers),
                })
                .collect(),
            qffn: QffnSpec::new(self.n_qubits, self.qffn_layers),
            n_classes: self.classes.len(),
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::new(self.model_spec(), kernels().get(&self.attention_mode)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
            gradient: self.gradient.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_time_seconds: f64,
}

pub const METRICS_HEADER: &str = "seed,epoch,train_loss,train_acc,test_acc";
pub const TIMING_HEADER: &str = "seed,epoch,wall_time_seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    /// Largest class-probability gap between circuit and analytic forwards.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit_path_max_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    /// Percent.
    pub mean_test_acc: f64,
    /// Sample standard deviation, percent.
    pub std_test_acc: f64,
    /// `mean±std` with two decimals.
    pub test_acc: String,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

/// Prepared train and test samples for one seed.
pub fn prepare_data(config: &ExperimentConfig, train: &ImageSet, test: &ImageSet, seed: u64) -> Result<(Vec<PreparedSample>, Vec<PreparedSample>)> {
    let (tr, te) = subsample(train, test, &config.classes, config.per_class_train, config.per_class_test, seed)?;
    let pipeline = FeaturePipeline::fit(&tr, &config.grids(), config.n_qubits, config.pca_rank_policy)?;
    Ok((pipeline.prepare_all(&tr)?, pipeline.prepare_all(&te)?))
}

/// Largest `|p_circuit - p_analytic|` over the first `count` samples.
pub fn circuit_path_deviation(model: &Model, params: &ModelParams, samples: &[PreparedSample], count: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in samples.iter().take(count) {
        let a = model.predict(&s.heads, params)?;
        let c = model.forward_circuit(&s.heads, params)?;
        for (x, y) in a.probs.iter().zip(&c.probs) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

pub const CIRCUIT_PATH_TOLERANCE: f64 = 1e-6;

/// Runs every seed of `config` and returns per-epoch records plus the summary.
/// `progress` sees each record as it is produced.
pub fn run_experiment(config: &ExperimentConfig, mut progress: impl FnMut(&MetricsRecord)) -> Result<(Vec<MetricsRecord>, RunSummary)> {
    config.validate()?;
    let (train_set, test_set) = load_dataset(&config.data_path())?;
    let model = config.build_model()?;
    let tc = config.train_config();
    let mut records = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let (train, test) = prepare_data(config, &train_set, &test_set, seed)?;
        let start = Instant::now();
        let outcome = train_run(&model, &tc, &train, &test, seed, |m| {
            let r = MetricsRecord {
                seed,
                epoch: m.epoch,
                train_loss: m.train_loss,
                train_acc: m.train_acc,
                test_acc: m.test_acc,
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            progress(&r);
            records.push(r);
        })?;
        let last = outcome.history.last().expect("epoch 0 is always recorded");
        let deviation = if config.verify_circuit_path {
            let d = circuit_path_deviation(&model, &outcome.params, &test, config.verify_samples)?;
            if d > CIRCUIT_PATH_TOLERANCE {
                return Err(Error::Inconsistent(d));
            }
            Some(d)
        } else {
            None
        };
        seeds.push(SeedResult {
            seed,
            final_train_loss: last.train_loss,
            final_train_acc: last.train_acc,
            final_test_acc: last.test_acc,
            circuit_path_max_deviation: deviation,
        });
    }
    let accs: Vec<f64> = seeds.iter().map(|s| 100.0 * s.final_test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let summary = RunSummary {
        config: config.clone(),
        seeds,
        mean_test_acc: mean,
        std_test_acc: std,
        test_acc: format_pm(mean, std),
    };
    Ok((records, summary))
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        writeln!(s, "{},{},{:.10},{:.10},{:.10}", r.seed, r.epoch, r.train_loss, r.train_acc, r.test_acc).unwrap();
    }
    s
}

pub fn timing_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(TIMING_HEADER);
    s.push('\n');
    for r in records {
        writeln!(s, "{},{},{:.3}", r.seed, r.epoch, r.wall_time_seconds).unwrap();
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `run` subcommand: executes and persists `metrics.csv`, `timing.csv` and
/// `summary.json` under `config.output`.
pub fn run(config: &ExperimentConfig, progress: impl FnMut(&MetricsRecord)) -> Result<RunSummary> {
    let (records, summary) = run_experiment(config, progress)?;
    create_dir(&config.output)?;
    write_file(&config.output.join("metrics.csv"), &metrics_csv(&records))?;
    write_file(&config.output.join("timing.csv"), &timing_csv(&records))?;
    write_file(
        &config.output.join("summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_qubits: usize,
    pub n_classes: usize,
    pub heads: usize,
    /// `mean±std`, or `failed`.
    pub result: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Cell configs in grid order (qubits, then heads, then class set).
pub fn sweep_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &q in &base.sweep.qubits {
        for &h in &base.sweep.heads {
            for classes in &base.sweep.class_sets {
                let mut c = base.clone();
                c.n_qubits = q;
                c.heads = h;
                c.head_grids = None;
                c.classes = classes.clone();
                c.output = base
                    .output
                    .join("cells")
                    .join(format!("q{q}_c{}_h{h}", classes.len()));
                out.push(c);
            }
        }
    }
    out
}

/// Table layout: one row per qubit count, columns task-major within heads
/// (`2class_1H, 3class_1H, ..., 2class_2H, ...`).
pub fn sweep_table(base: &ExperimentConfig, cells: &[SweepCell]) -> String {
    let mut lookup = BTreeMap::new();
    for c in cells {
        lookup.insert((c.n_qubits, c.n_classes, c.heads), c.result.as_str());
    }
    let mut columns = Vec::new();
    for &h in &base.sweep.heads {
        for classes in &base.sweep.class_sets {
            columns.push((classes.len(), h));
        }
    }
    let mut s = String::from("qubits");
    for (c, h) in &columns {
        write!(s, ",{c}class_{h}H").unwrap();
    }
    s.push('\n');
    for &q in &base.sweep.qubits {
        write!(s, "{q}").unwrap();
        for &(c, h) in &columns {
            write!(s, ",{}", lookup.get(&(q, c, h)).copied().unwrap_or("")).unwrap();
        }
        s.push('\n');
    }
    s
}

/// `sweep` subcommand. Failing cells are recorded and the sweep continues.
pub fn sweep(base: &ExperimentConfig, mut on_cell: impl FnMut(&SweepCell)) -> Result<Vec<SweepCell>> {
    let configs = sweep_configs(base);
    if configs.is_empty() {
        return Err(Error::config("sweep", "empty grid"));
    }
    let mut cells = Vec::with_capacity(configs.len());
    for c in &configs {
        let outcome = run(c, |_| {});
        let cell = match outcome {
            Ok(s) => SweepCell {
                n_qubits: c.n_qubits,
                n_classes: c.classes.len(),
                heads: c.heads,
                result: s.test_acc,
                error: None,
            },
            Err(e) => SweepCell {
                n_qubits: c.n_qubits,
                n_classes: c.classes.len(),
                heads: c.heads,
                result: "failed".into(),
                error: Some(e.to_string()),
            },
        };
        on_cell(&cell);
        cells.push(cell);
    }
    create_dir(&base.output)?;
    write_file(&base.output.join("sweep.csv"), &sweep_table(base, &cells))?;
    write_file(
        &base.output.join("sweep.json"),
        &(serde_json::to_string_pretty(&cells)? + "\n"),
    )?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"classes": [3, 5, 7], "heads": 2}"#).unwrap();
        assert_eq!(partial.grids(), vec![(2, 2), (7, 7)]);
        partial.validate().unwrap();
        assert!(matches!(ExperimentConfig::from_json(r#"{"qubits": 4}"#), Err(Error::Config { .. })));
    }

    #[test]
    fn validation_names_fields() {
        let field = |c: ExperimentConfig| match c.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let d = ExperimentConfig::default;
        assert_eq!(field(ExperimentConfig { n_qubits: 9, ..d() }), "n_qubits");
        assert_eq!(field(ExperimentConfig { classes: vec![1], ..d() }), "classes");
        assert_eq!(field(ExperimentConfig { heads: 3, ..d() }), "heads");
        assert_eq!(field(ExperimentConfig { head_grids: Some(vec![(4, 4)]), ..d() }), "head_grids");
        assert_eq!(field(ExperimentConfig { attention_mode: "swap".into(), ..d() }), "attention_mode");
        assert_eq!(field(ExperimentConfig { seeds: vec![], ..d() }), "seeds");
        assert_eq!(
            field(ExperimentConfig {
                heads: 2,
                verify_circuit_path: true,
                ..d()
            }),
            "verify_circuit_path"
        );
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_std(&[99.0, 100.0, 98.0]);
        assert!((m - 99.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert_eq!(format_pm(99.84, 0.314), "99.84±0.31");
        assert_eq!(mean_std(&[50.0]), (50.0, 0.0));
    }

    #[test]
    fn sweep_grid_has_36_cells_and_marks_failures() {
        let base = ExperimentConfig::default();
        let configs = sweep_configs(&base);
        assert_eq!(configs.len(), 36);
        let cells: Vec<SweepCell> = configs
            .iter()
            .map(|c| SweepCell {
                n_qubits: c.n_qubits,
                n_classes: c.classes.len(),
                heads: c.heads,
                result: if c.n_qubits == 5 && c.heads == 2 && c.classes.len() == 3 {
                    "failed".into()
                } else {
                    "1.00±0.00".into()
                },
                error: None,
            })
            .collect();
        let table = sweep_table(&base, &cells);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "qubits,2class_1H,3class_1H,4class_1H,2class_2H,3class_2H,4class_2H");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[3], "5,1.00±0.00,1.00±0.00,1.00±0.00,1.00±0.00,failed,1.00±0.00");
    }

    #[test]
    fn metrics_csv_schema() {
        let r = MetricsRecord {
            seed: 3,
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.75,
            test_acc: 1.0,
            wall_time_seconds: 2.0,
        };
        let csv = metrics_csv(&[r.clone()]);
        assert_eq!(csv, "seed,epoch,train_loss,train_acc,test_acc\n3,1,0.5000000000,0.7500000000,1.0000000000\n");
        assert_eq!(timing_csv(&[r]), "seed,epoch,wall_time_seconds\n3,1,2.000\n");
    }
}
