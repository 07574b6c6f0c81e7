//! Sweeps over (regime x scale), the results ledger, Pareto fronts and plots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{Read as _, Seek, SeekFrom, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::model_cost;
use crate::datagen::{read_dataset, Dataset};
use crate::error::{config_err, Error, Result};
use crate::models::{build_model, Architecture, Model, ModelSpec};
use crate::quant::QuantRegime;
use crate::rescale::ScaleSpec;
use crate::train::{evaluate, qat_finetune, train, Checkpoint, TrainConfig};

/// Default scale factors of a sweep.
pub const DEFAULT_SCALES: [f64; 4] = [0.7, 0.5, 0.3, 0.2];
/// Low-resolution presets per dataset, finest scale last.
pub const BURGERS_FINE_SCALES: [f64; 3] = [0.02, 0.05, 0.1];
pub const DIFFSORP_FINE_SCALES: [f64; 3] = [0.01, 0.02, 0.05];
pub const DARCY_FINE_SCALES: [f64; 3] = [0.05, 0.1, 0.2];
/// MSE values are clamped to this before taking logs in plots.
pub const PLOT_MSE_FLOOR: f64 = 1e-12;
pub const LEDGER_FILE: &str = "ledger.csv";
pub const RESULTS_FILE: &str = "results.csv";

/// Network hyperparameters. Field counts, step counts and the grid come
/// from the dataset, the training config and the scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub width: usize,
    pub modes: usize,
    pub projection: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { architecture: Architecture::Fno1d, layers: 4, width: 128, modes: 16, projection: 128 }
    }
}

impl ModelConfig {
    /// Spec for a network on `grid` points. Modes are capped at `grid / 2`.
    pub fn spec(&self, fields: usize, train: &TrainConfig, grid: usize) -> ModelSpec {
        let base = match self.architecture {
            Architecture::Fno1d => ModelSpec::fno1d(fields, train.input_steps, train.output_steps, grid),
            Architecture::Unet1d => ModelSpec::unet1d(fields, train.input_steps, train.output_steps, grid),
        };
        ModelSpec {
            layers: self.layers,
            width: self.width,
            modes: self.modes.min(grid / 2),
            projection: self.projection,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Trailing share of the trajectories held out for validation.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<QuantRegime>,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_validation_fraction() -> f64 {
    0.1
}

fn default_regimes() -> Vec<QuantRegime> {
    QuantRegime::DEFAULT_SWEEP.to_vec()
}

fn default_scales() -> Vec<f64> {
    DEFAULT_SCALES.to_vec()
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            validation_fraction: default_validation_fraction(),
            regimes: default_regimes(),
            scales: default_scales(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| config_err!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err!("cannot serialize config: {e}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(config_err!("validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(config_err!("scale factor {s} outside (0, 1]"));
        }
        Ok(())
    }

    /// Dataset id used in records and plot names: the dataset file stem.
    pub fn dataset_id(&self) -> String {
        self.dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
    }

    /// Hash of everything that influences a cell except the grid lists and
    /// file locations, combined with the dataset bytes.
    pub fn config_hash(&self, dataset_bytes: &[u8]) -> Result<String> {
        let mut canon = self.clone();
        canon.regimes.clear();
        canon.scales.clear();
        canon.output_dir = PathBuf::new();
        canon.dataset = PathBuf::new();
        let mut h = Sha256::new();
        h.update(canon.to_toml()?.as_bytes());
        h.update(Sha256::digest(dataset_bytes));
        Ok(h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

/// Loaded dataset split into training and validation parts.
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
}

pub fn split_dataset(ds: &Dataset, validation_fraction: f64) -> Result<Split> {
    let n_val = ((ds.len() as f64 * validation_fraction).ceil() as usize).max(1);
    if n_val >= ds.len() {
        return Err(config_err!("{} trajectories cannot be split with validation fraction {validation_fraction}", ds.len()));
    }
    let n_train = ds.len() - n_val;
    Ok(Split {
        train: ds.subset(&(0..n_train).collect::<Vec<_>>()),
        val: ds.subset(&(n_train..ds.len()).collect::<Vec<_>>()),
    })
}

/// A freshly initialized model for `cfg` at scale `factor` on data of `ds`'s shape.
pub fn init_model(cfg: &RunConfig, ds: &Dataset, factor: f64) -> Result<Model> {
    let periodic = ds.pde().map(|p| p.periodic()).unwrap_or(false);
    let scale = ScaleSpec::new(factor, ds.nx(), cfg.model.architecture, periodic)?;
    let spec = cfg.model.spec(ds.fields(), &cfg.train, scale.network_size);
    build_model(&spec, cfg.train.seed)?.with_scale(scale)
}

/// One finished cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub dataset: String,
    pub architecture: Architecture,
    /// Empty for the float model.
    pub regime: Option<QuantRegime>,
    pub scale: f64,
    pub network_size: usize,
    pub val_mse: f64,
    pub cost: u64,
    pub flops: u64,
    pub seed: u64,
    /// Relative to the output directory.
    pub checkpoint: String,
}

impl ExperimentRecord {
    pub fn cell(&self) -> String {
        cell_id(self.regime, self.scale)
    }
}

pub fn cell_id(regime: Option<QuantRegime>, scale: f64) -> String {
    match regime {
        Some(r) => format!("{r}@{scale}"),
        None => format!("float@{scale}"),
    }
}

/// Indices of points not strictly dominated in (cost, error). Equal
/// points are all kept.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(points[a].1.total_cmp(&points[b].1)));
    let mut keep = Vec::new();
    let mut best_prev = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let cost = points[order[i]].0;
        let group_min = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == cost {
            if points[order[j]].1 == group_min && group_min < best_prev {
                keep.push(order[j]);
            }
            j += 1;
        }
        best_prev = best_prev.min(group_min);
        i = j;
    }
    keep.sort_unstable();
    keep
}

/// Records on the cost vs validation-MSE Pareto front, in input order.
pub fn pareto_front(records: &[ExperimentRecord]) -> Vec<ExperimentRecord> {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.cost as f64, r.val_mse)).collect();
    pareto_indices(&pts).into_iter().map(|i| records[i].clone()).collect()
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::Usage(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| config_err!("csv row {}: {e}", i + 1)))
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    records_from_csv(&text)
}

/// Append-only CSV of finished cells, written under an exclusive lock.
pub struct Ledger {
    path: PathBuf,
}

impl Ledger {
    pub fn new(path: impl Into<PathBuf>) -> Ledger {
        Ledger { path: path.into() }
    }

    pub fn records(&self) -> Result<Vec<ExperimentRecord>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        read_records(&self.path)
    }

    pub fn append(&self, record: &ExperimentRecord) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        let mut f = OpenOptions::new().create(true).read(true).append(true).open(&self.path).map_err(io)?;
        f.lock().map_err(io)?;
        let mut existing = String::new();
        f.seek(SeekFrom::Start(0)).map_err(io)?;
        f.read_to_string(&mut existing).map_err(io)?;
        let csv = records_to_csv(std::slice::from_ref(record))?;
        let row = if existing.is_empty() { csv.as_str() } else { csv.split_once('\n').map(|(_, r)| r).unwrap_or("") };
        f.write_all(row.as_bytes()).map_err(io)?;
        f.flush().map_err(io)?;
        f.unlock().map_err(io)
    }
}

#[derive(Debug)]
pub struct CellFailure {
    pub cell: String,
    pub error: Error,
}

/// What a sweep produced.
#[derive(Debug, Default)]
pub struct SweepOutcome {
    /// Records of every requested cell that is complete, in grid order.
    pub records: Vec<ExperimentRecord>,
    /// Cells trained in this invocation.
    pub trained: Vec<String>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn scale_tag(scale: f64) -> String {
    format!("s{scale}")
}

fn record_for(
    cfg: &RunConfig,
    hash: &str,
    model: &Model,
    regime: Option<QuantRegime>,
    scale: f64,
    val_mse: f64,
    checkpoint: String,
) -> Result<ExperimentRecord> {
    let report = model_cost(model, regime, cfg.train.test_steps)?;
    Ok(ExperimentRecord {
        config_hash: hash.to_string(),
        dataset: cfg.dataset_id(),
        architecture: model.spec.architecture,
        regime,
        scale,
        network_size: model.scale().network_size,
        val_mse,
        cost: report.total,
        flops: report.flops,
        seed: cfg.train.seed,
        checkpoint,
    })
}

/// Trains a float model per scale, then fine-tunes one quantized copy per
/// regime. Cells already in the ledger under the same config hash are
/// skipped; a failing cell is reported without stopping the others.
pub fn run_experiment(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let bytes = fs::read(&cfg.dataset).map_err(|e| Error::io(&cfg.dataset, e))?;
    let ds = crate::datagen::dataset_from_bytes(&bytes)?;
    let split = split_dataset(&ds, cfg.validation_fraction)?;
    let hash = cfg.config_hash(&bytes)?;
    let run_dir = cfg.output_dir.join(&hash);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let resolved = run_dir.join("config.toml");
    fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
    let ledger = Ledger::new(cfg.output_dir.join(LEDGER_FILE));
    let done: BTreeMap<String, ExperimentRecord> =
        ledger.records()?.into_iter().filter(|r| r.config_hash == hash).map(|r| (r.cell(), r)).collect();

    let mut out = SweepOutcome::default();
    for &scale in &cfg.scales {
        let float_cell = cell_id(None, scale);
        let float_rel = format!("{hash}/float_{}.qpck", scale_tag(scale));
        let float_model = match done.get(&float_cell) {
            Some(rec) => {
                out.records.push(rec.clone());
                Checkpoint::load(&cfg.output_dir.join(&rec.checkpoint)).map(|c| c.model)
            }
            None => train_float(cfg, &split, &hash, scale, &float_rel).map(|(rec, model)| {
                out.records.push(rec);
                out.trained.push(float_cell.clone());
                model
            }),
        };
        let float_model = match float_model {
            Ok(m) => m,
            Err(error) => {
                out.failures.push(CellFailure { cell: float_cell, error });
                continue;
            }
        };
        for &regime in &cfg.regimes {
            let cell = cell_id(Some(regime), scale);
            if let Some(rec) = done.get(&cell) {
                out.records.push(rec.clone());
                continue;
            }
            let rel = format!("{hash}/{regime}_{}.qpck", scale_tag(scale));
            let result = qat_finetune(&float_model, regime, &split.train, &split.val, &cfg.train).and_then(|o| {
                o.checkpoint(Some(regime), cfg.train.seed).save(&cfg.output_dir.join(&rel))?;
                let rec = record_for(cfg, &hash, &o.model, Some(regime), scale, o.best_val, rel)?;
                ledger.append(&rec)?;
                Ok(rec)
            });
            match result {
                Ok(rec) => {
                    out.records.push(rec);
                    out.trained.push(cell);
                }
                Err(error) => out.failures.push(CellFailure { cell, error }),
            }
        }
    }
    Ok(out)
}

fn train_float(cfg: &RunConfig, split: &Split, hash: &str, scale: f64, rel: &str) -> Result<(ExperimentRecord, Model)> {
    let model = init_model(cfg, &split.train, scale)?;
    let o = train(model, &split.train, &split.val, &cfg.train)?;
    o.checkpoint(None, cfg.train.seed).save(&cfg.output_dir.join(rel))?;
    let rec = record_for(cfg, hash, &o.model, None, scale, o.best_val, rel.to_string())?;
    Ledger::new(cfg.output_dir.join(LEDGER_FILE)).append(&rec)?;
    Ok((rec, o.model))
}

/// Validation MSE of a checkpoint on the validation part of `cfg`'s dataset.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<f64> {
    let ds = read_dataset(&cfg.dataset)?;
    let split = split_dataset(&ds, cfg.validation_fraction)?;
    evaluate(&Checkpoint::load(checkpoint)?.model, &split.val, &cfg.train)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn regime_label(r: Option<QuantRegime>) -> String {
    r.map(|r| r.to_string()).unwrap_or_else(|| "float".into())
}

/// Log-log cost vs MSE plot: one polyline per regime across scales, front
/// points ringed.
pub fn render_svg(records: &[ExperimentRecord], title: &str) -> String {
    let (w, h, m) = (640.0, 480.0, 60.0);
    let lx: Vec<f64> = records.iter().map(|r| (r.cost.max(1) as f64).log10()).collect();
    let ly: Vec<f64> = records.iter().map(|r| r.val_mse.max(PLOT_MSE_FLOOR).log10()).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
        }
    };
    let (x0, x1) = span(&lx);
    let (y0, y1) = span(&ly);
    let px = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">log10 cost [{x0:.2}, {x1:.2}]</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">log10 validation MSE [{y0:.2}, {y1:.2}]</text>"#,
        h / 2.0,
        h / 2.0
    );

    let regimes: BTreeSet<String> = records.iter().map(|r| regime_label(r.regime)).collect();
    for (k, label) in regimes.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| regime_label(records[i].regime) == *label).collect();
        idx.sort_by(|&a, &b| records[b].scale.total_cmp(&records[a].scale));
        let pts: Vec<String> = idx.iter().map(|&i| format!("{:.2},{:.2}", px(lx[i]), py(ly[i]))).collect();
        let _ = writeln!(s, r#"<polyline class="regime" data-regime="{label}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        for &i in &idx {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(lx[i]), py(ly[i]));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>"#, w - m + 4.0, m + 16.0 * k as f64);
    }
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.cost as f64, r.val_mse)).collect();
    for i in pareto_indices(&pts) {
        let _ = writeln!(s, r#"<circle class="pareto" cx="{:.2}" cy="{:.2}" r="7" fill="none" stroke="black" stroke-width="1.5"/>"#, px(lx[i]), py(ly[i]));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `results.csv` and one `pareto_<dataset>.svg` per dataset.
pub fn emit_outputs(records: &[ExperimentRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Usage("no records to emit".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(RESULTS_FILE);
    let mut f = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    f.write_all(records_to_csv(records)?.as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
    let mut written = vec![csv_path];
    let datasets: BTreeSet<&str> = records.iter().map(|r| r.dataset.as_str()).collect();
    for d in datasets {
        let subset: Vec<ExperimentRecord> = records.iter().filter(|r| r.dataset == d).cloned().collect();
        let path = dir.join(format!("pareto_{d}.svg"));
        fs::write(&path, render_svg(&subset, d)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
