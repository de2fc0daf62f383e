//! Losses, minibatch composition, optimization and best-checkpoint
//! retention for trajectory-matching and neighborhood-regularized training.

mod kernel;
mod loss;
mod optim;

pub use kernel::{mmd2, mmd2_biased, rq_kernel, KernelConfig, Mmd2Objective};
pub use loss::{
    batch_loss, loss_and_grad, loss_parts, neighborhood_loss, sample_neighborhoods,
    sample_segments, segment_starts, trajectory_loss, Batch, LossGrad, LossTerms,
    RolloutSettings,
};
pub use optim::{adabelief_step, AdaBeliefConfig, AdaBeliefState};

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cover::NeighborCover;
use crate::dataset::{derive_seed, rng, Split, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{default_dims, MlpVectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    Neighborhood,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "neighborhood" => Ok(Method::Neighborhood),
            _ => Err(Error::arg(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    /// Rollout steps per segment.
    pub horizon: usize,
    pub batch_size: usize,
    /// Neighbors per center.
    pub k: usize,
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub val_every: usize,
    pub seed: u64,
    /// RK4 substeps per data interval.
    pub n_sub: usize,
    pub taylor_order: usize,
    /// Layer widths including input and output; empty selects the default.
    pub dims: Vec<usize>,
    pub optimizer: AdaBeliefConfig,
    pub kernel: KernelConfig,
    /// Validation segments are an evenly spaced subset of at most this size.
    pub val_max_segments: usize,
    /// Approximate number of states per gradient tape.
    pub chunk_states: usize,
    pub max_skips: usize,
    pub log_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Neighborhood,
            horizon: 10,
            batch_size: 2048,
            k: 16,
            lambda: 10.0,
            lr: 2e-3,
            steps: 5000,
            val_every: 100,
            seed: 0,
            n_sub: 2,
            taylor_order: 2,
            dims: Vec::new(),
            optimizer: AdaBeliefConfig::default(),
            kernel: KernelConfig::default(),
            val_max_segments: 2048,
            chunk_states: 256,
            max_skips: 50,
            log_wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_lambda(&self) -> f64 {
        match self.method {
            Method::Vanilla => 0.0,
            Method::Neighborhood => self.lambda,
        }
    }

    pub fn uses_neighborhoods(&self) -> bool {
        self.effective_lambda() > 0.0
    }

    /// Centers per step: `|B|/(K+1)` with neighborhoods, `|B|` without.
    pub fn centers_per_step(&self) -> usize {
        if self.uses_neighborhoods() {
            self.batch_size / (self.k + 1)
        } else {
            self.batch_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_sub == 0 || self.steps == 0 || self.val_every == 0 {
            return Err(Error::arg("horizon, n_sub, steps and val_every must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg("lambda must be a finite non-negative number"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.uses_neighborhoods() && self.k < 2 {
            return Err(Error::arg("need K >= 2 neighbors per center"));
        }
        if self.centers_per_step() == 0 {
            return Err(Error::arg(format!(
                "batch size {} leaves no room for a center with {} neighbors",
                self.batch_size, self.k
            )));
        }
        if !(1..=2).contains(&self.taylor_order) {
            return Err(Error::arg("taylor order must be 1 or 2"));
        }
        self.kernel.validate()
    }

    fn dims_for(&self, d: usize) -> Result<Vec<usize>> {
        if self.dims.is_empty() {
            return Ok(default_dims(d));
        }
        if self.dims.len() < 2 || self.dims[0] != d || *self.dims.last().unwrap() != d {
            return Err(Error::arg(format!("layer widths {:?} do not fit dimension {d}", self.dims)));
        }
        Ok(self.dims.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// `None` on the initial row; NaN on skipped steps.
    pub train: Option<(f64, f64, f64)>,
    pub val_loss: Option<f64>,
    pub wallclock_ms: Option<u128>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub comment: String,
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "step,train_loss,traj_loss,nbhd_loss,val_loss,wallclock_ms";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for line in self.comment.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str(LOG_HEADER);
        s.push('\n');
        let num = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let (a, b, c) = match r.train {
                Some((a, b, c)) => (Some(a), Some(b), Some(c)),
                None => (None, None, None),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step,
                num(a),
                num(b),
                num(c),
                num(r.val_loss),
                r.wallclock_ms.map(|w| w.to_string()).unwrap_or_default()
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_text(path, &self.to_csv())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen (the initial model
    /// included).
    pub best: MlpVectorField,
    pub best_step: usize,
    pub best_val: f64,
    pub initial_val: f64,
    pub last: MlpVectorField,
    pub log: TrainLog,
    pub skipped_steps: usize,
    /// Model states entering each step: centers plus neighbors.
    pub states_per_step: usize,
}

/// Evenly spaced validation segments, at most `max` of them.
pub fn validation_batch(ds: &TrajectoryDataset, horizon: usize, max: usize) -> Result<Batch> {
    let all = segment_starts(ds.n, ds.m, horizon);
    if all.is_empty() {
        return Err(Error::Batch("validation trajectories are shorter than the horizon".into()));
    }
    let starts: Vec<_> = if all.len() > max && max > 0 {
        (0..max).map(|q| all[q * all.len() / max]).collect()
    } else {
        all
    };
    Batch::segments(ds, &starts, horizon)
}

fn validation_loss(model: &MlpVectorField, batch: &Batch, roll: &RolloutSettings) -> f64 {
    match trajectory_loss(model, batch, roll) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

/// Runs the minibatch loop. `cover` is required when the neighborhood term
/// is active.
pub fn train(
    ds: &TrajectoryDataset,
    cover: Option<&NeighborCover>,
    val_ds: &TrajectoryDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.split != Split::Train {
        return Err(Error::arg(format!("expected the train split, got {}", ds.split)));
    }
    let dims = cfg.dims_for(ds.d)?;
    if val_ds.d != ds.d {
        return Err(Error::arg("validation and training dimensions differ"));
    }
    let roll = RolloutSettings {
        horizon: cfg.horizon,
        dt: ds.dt,
        n_sub: cfg.n_sub,
        taylor_order: cfg.taylor_order,
    };
    let eligible = if cfg.uses_neighborhoods() {
        let cover = cover.ok_or_else(|| Error::arg("the neighborhood term needs a cover"))?;
        if cover.n_traj != ds.n || cover.m != ds.m {
            return Err(Error::arg("cover was built for a different dataset"));
        }
        let e = cover.eligible(cfg.k);
        if e.is_empty() {
            return Err(Error::Batch(format!("no center has at least {} neighbors", cfg.k)));
        }
        e
    } else {
        Vec::new()
    };
    let n_centers = cfg.centers_per_step();
    let states_per_step = if cfg.uses_neighborhoods() {
        n_centers.min(eligible.len()) * (cfg.k + 1)
    } else {
        n_centers
    };
    let chunk = if cfg.uses_neighborhoods() {
        (cfg.chunk_states / (cfg.k + 1)).max(1)
    } else {
        cfg.chunk_states.max(1)
    };
    let val_batch = validation_batch(val_ds, cfg.horizon, cfg.val_max_segments)?;

    let mut model = MlpVectorField::init(derive_seed(cfg.seed, "train/init"), &dims)?;
    let mut params = model.flat_params();
    let mut opt = AdaBeliefState::new(params.len(), cfg.optimizer);
    let mut batch_rng = rng(derive_seed(cfg.seed, "train/batches"));
    let start = Instant::now();
    let clock = |on: bool| on.then(|| start.elapsed().as_millis());

    let initial_val = validation_loss(&model, &val_batch, &roll);
    let mut best = (model.clone(), 0usize, initial_val);
    let mut log = TrainLog {
        comment: format!(
            "method={:?} lambda={} K={} centers_per_step={} states_per_step={}\n\
             val_loss is the trajectory loss on the validation split, evaluated every {} steps",
            cfg.method,
            cfg.effective_lambda(),
            cfg.k,
            n_centers,
            states_per_step,
            cfg.val_every
        ),
        rows: vec![LogRow {
            step: 0,
            train: None,
            val_loss: Some(initial_val),
            wallclock_ms: clock(cfg.log_wallclock),
        }],
    };
    let mut consecutive = 0usize;
    let mut skipped = 0usize;
    for step in 1..=cfg.steps {
        let batch = if cfg.uses_neighborhoods() {
            sample_neighborhoods(
                ds,
                cover.unwrap(),
                &eligible,
                n_centers,
                cfg.k,
                cfg.horizon,
                &mut batch_rng,
            )?
        } else {
            sample_segments(ds, n_centers, cfg.horizon, &mut batch_rng)?
        };
        let lg = match loss_and_grad(&model, &batch, &roll, &cfg.kernel, cfg.effective_lambda(), chunk) {
            Ok(lg) if lg.loss.is_finite() && lg.grad.iter().all(|g| g.is_finite()) => Some(lg),
            Ok(_) | Err(Error::Rollout { .. }) => None,
            Err(e) => return Err(e),
        };
        let train_row = match lg {
            Some(lg) => {
                consecutive = 0;
                adabelief_step(&mut params, &lg.grad, &mut opt, cfg.lr);
                model.set_flat(&params);
                (lg.loss, lg.traj, lg.nbhd)
            }
            None => {
                consecutive += 1;
                skipped += 1;
                log::warn!("step {step}: non-finite loss, update skipped");
                if consecutive > cfg.max_skips {
                    log.rows.push(LogRow {
                        step,
                        train: Some((f64::NAN, f64::NAN, f64::NAN)),
                        val_loss: None,
                        wallclock_ms: clock(cfg.log_wallclock),
                    });
                    let csv = log.to_csv();
                    let tail: Vec<&str> = csv.lines().rev().take(5).collect();
                    let tail: Vec<&str> = tail.into_iter().rev().collect();
                    return Err(Error::TrainingAborted(format!(
                        "{consecutive} consecutive non-finite steps ending at step {step}; last log rows:\n{}",
                        tail.join("\n")
                    )));
                }
                (f64::NAN, f64::NAN, f64::NAN)
            }
        };
        let val_loss = (step % cfg.val_every == 0 || step == cfg.steps).then(|| {
            let v = validation_loss(&model, &val_batch, &roll);
            if v < best.2 {
                best = (model.clone(), step, v);
            }
            log::info!("step {step}: train {:.4e}, val {:.4e}", train_row.0, v);
            v
        });
        log.rows.push(LogRow {
            step,
            train: Some(train_row),
            val_loss,
            wallclock_ms: clock(cfg.log_wallclock),
        });
    }
    let (best_model, best_step, best_val) = best;
    Ok(TrainOutcome {
        best: best_model,
        best_step,
        best_val,
        initial_val,
        last: model,
        log,
        skipped_steps: skipped,
        states_per_step,
    })
}
