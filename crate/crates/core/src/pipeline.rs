//! Declarative experiments: data generation, cover caching, training,
//! evaluation and sweeps over fixed on-disk layouts.
//!
//! A data directory holds `train/`, `val/`, `test/` and (once built)
//! `cover/`. A run directory `runs/<name>/` holds `config.resolved.json`,
//! `model.json`, `params.bin`, `train_log.csv`, `report.json` and the
//! evaluation CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cover::{build_cover, calibrate_radii, CalibrationConfig, CoverSummaryExtra, NeighborCover};
use crate::dataset::{generate_splits, DatasetSplits, GenerationConfig, Split, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, hyperparam_sweep, sinkhorn_score, EvalConfig, Evaluation, SweepResult};
use crate::io;
use crate::model::{CheckpointInfo, MlpVectorField};
use crate::systems::{SystemName, SystemSpec};
use crate::train::{train, Method, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub system: SystemName,
    /// 0 selects the family default.
    pub dim: usize,
    /// Missing entries fall back to the family defaults.
    pub params: BTreeMap<String, f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub generation: GenerationConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            system: SystemName::Lorenz63,
            dim: 0,
            params: BTreeMap::new(),
            noise_std: 0.1,
            seed: 0,
            generation: GenerationConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> Result<SystemSpec> {
        let dim = if self.dim == 0 {
            SystemSpec::by_name(self.system).dim
        } else {
            self.dim
        };
        SystemSpec::from_params(self.system, dim, &self.params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Argument("noise_std must be a finite non-negative number".into()));
        }
        self.generation.validate()?;
        self.spec()?.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ks: crate::eval::SWEEP_KS.to_vec(),
            lambdas: crate::eval::SWEEP_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub runs_dir: PathBuf,
    pub data: DataConfig,
    pub cover: CalibrationConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            runs_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            cover: CalibrationConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput {
                path: path.to_path_buf(),
                msg: "config file not found".into(),
            });
        }
        io::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Argument(format!("invalid run name {:?}", self.name)));
        }
        self.data.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.sweep.ks.is_empty() || self.sweep.lambdas.is_empty() {
            return Err(Error::Argument("sweep grid is empty".into()));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }
}

fn split_dir(data: &Path, split: Split) -> PathBuf {
    data.join(split.as_str())
}

/// Generates and writes all three splits. Refuses to touch an existing
/// split directory unless `force` is set.
pub fn generate_data(cfg: &DataConfig, force: bool) -> Result<DatasetSplits> {
    cfg.validate()?;
    if !force {
        for s in Split::ALL {
            let d = split_dir(&cfg.dir, s);
            if d.exists() {
                return Err(Error::Exists(d));
            }
        }
    }
    let splits = generate_splits(&cfg.spec()?, cfg.noise_std, cfg.seed, &cfg.generation)?;
    for s in Split::ALL {
        splits.get(s).save(&split_dir(&cfg.dir, s))?;
    }
    Ok(splits)
}

pub fn load_split(data: &Path, split: Split) -> Result<TrajectoryDataset> {
    let dir = split_dir(data, split);
    if !dir.join("meta.json").exists() {
        return Err(Error::MissingInput {
            path: dir,
            msg: "dataset not found; run `generate` first".into(),
        });
    }
    TrajectoryDataset::load(&dir)
}

pub fn cover_dir(data: &Path) -> PathBuf {
    data.join("cover")
}

/// Calibrates radii, builds the cover over the train split and caches it
/// under the data directory.
pub fn build_cover_cache(
    data: &Path,
    cal: &CalibrationConfig,
    horizon: usize,
    force: bool,
) -> Result<NeighborCover> {
    let dir = cover_dir(data);
    if dir.join("cover.bin").exists() && !force {
        return Err(Error::Exists(dir));
    }
    let train_ds = load_split(data, Split::Train)?;
    let radii = calibrate_radii(&train_ds.points(), train_ds.noise_std, cal)?;
    let cover = build_cover(&train_ds, radii, horizon)?;
    cover.save(
        &dir,
        &CoverSummaryExtra {
            noise_std: train_ds.noise_std,
            target_frac: cal.target_frac,
            multiplier: cal.multiplier,
        },
    )?;
    Ok(cover)
}

/// Loads the cached cover if it matches the requested settings, building
/// it otherwise.
pub fn cover_for(data: &Path, cal: &CalibrationConfig, horizon: usize) -> Result<NeighborCover> {
    let dir = cover_dir(data);
    if dir.join("cover.bin").exists() {
        let cover = NeighborCover::load(&dir)?;
        let summary: crate::cover::CoverSummary = io::read_json(&dir.join("cover.json"))?;
        if cover.horizon == horizon
            && summary.target_frac == cal.target_frac
            && summary.multiplier == cal.multiplier
        {
            return Ok(cover);
        }
        log::info!("cached cover does not match the requested settings; rebuilding");
    }
    build_cover_cache(data, cal, horizon, true)
}

fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.join(RESOLVED_CONFIG).exists() && !force {
        return Err(Error::Exists(dir.to_path_buf()));
    }
    io::ensure_dir(dir)
}

/// Trains one model as configured, writing the resolved config, the best
/// checkpoint and the training log into `out`.
pub fn train_into(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    let train_ds = load_split(&cfg.data.dir, Split::Train)?;
    let val_ds = load_split(&cfg.data.dir, Split::Val)?;
    let cover = if cfg.train.uses_neighborhoods() {
        Some(cover_for(&cfg.data.dir, &cfg.cover, cfg.train.horizon)?)
    } else {
        None
    };
    io::write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    let outcome = train(&train_ds, cover.as_ref(), &val_ds, &cfg.train)?;
    outcome.best.save(
        out,
        &CheckpointInfo {
            step: outcome.best_step,
            val_loss: Some(outcome.best_val),
        },
    )?;
    outcome.log.save(&out.join("train_log.csv"))?;
    Ok(outcome)
}

pub fn run_training(cfg: &ExperimentConfig, force: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    prepare_run_dir(&dir, force)?;
    train_into(cfg, &dir)
}

pub fn load_run(run: &Path) -> Result<(ExperimentConfig, MlpVectorField)> {
    let cfg = ExperimentConfig::load(&run.join(RESOLVED_CONFIG))?;
    if !run.join("model.json").exists() {
        return Err(Error::MissingInput {
            path: run.to_path_buf(),
            msg: "no checkpoint; run `train` first".into(),
        });
    }
    let (model, _) = MlpVectorField::load(run)?;
    Ok((cfg, model))
}

/// Evaluates the run's checkpoint on the clean test and validation splits
/// and writes the report next to it.
pub fn run_eval(run: &Path, overrides: Option<&EvalConfig>) -> Result<Evaluation> {
    let (cfg, model) = load_run(run)?;
    let ecfg = overrides.unwrap_or(&cfg.eval);
    ecfg.validate()?;
    let test = load_split(&cfg.data.dir, Split::Test)?;
    let val = load_split(&cfg.data.dir, Split::Val)?;
    test.clean_states()?;
    val.clean_states()?;
    let ev = evaluate(&model, &test, &val, ecfg)?;
    ev.save(run)?;
    Ok(ev)
}

/// Trains the neighborhood method for every grid cell (each in its own
/// subdirectory), scores the best checkpoints on the clean validation
/// split and writes `sweep.csv` and `sweep.json`.
pub fn run_sweep(cfg: &ExperimentConfig, force: bool) -> Result<SweepResult> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    prepare_run_dir(&dir, force)?;
    io::write_json(&dir.join(RESOLVED_CONFIG), cfg)?;
    let val = load_split(&cfg.data.dir, Split::Val)?;
    val.clean_states()?;
    let result = hyperparam_sweep(&cfg.sweep.ks, &cfg.sweep.lambdas, |k, lambda| {
        let mut cell = cfg.clone();
        cell.name = format!("k{k}_lambda{lambda}");
        cell.runs_dir = dir.join("cells");
        cell.train.method = Method::Neighborhood;
        cell.train.k = k;
        cell.train.lambda = lambda;
        let out = cell.run_dir();
        io::ensure_dir(&out)?;
        let outcome = train_into(&cell, &out)?;
        let score = sinkhorn_score(&outcome.best, &val, &cfg.eval)?;
        log::info!("sweep cell K={k} lambda={lambda}: score {:.6e}", score.value);
        Ok(score.value)
    });
    io::write_text(&dir.join("sweep.csv"), &result.to_csv())?;
    io::write_json(&dir.join("sweep.json"), &result)?;
    Ok(result)
}
