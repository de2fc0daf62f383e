use std::rc::Rc;

use rand::seq::index;
use rand::Rng;

use super::kernel::{KernelConfig, Mmd2Objective};
use crate::autodiff::{BlockReduce, Tape, Tensor, Var};
use crate::cover::NeighborCover;
use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{rollout_center, rollout_neighborhood, MlpVectorField};

/// Rollout settings shared by every loss term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutSettings {
    pub horizon: usize,
    pub dt: f64,
    pub n_sub: usize,
    pub taylor_order: usize,
}

/// Segment starts `(trajectory, time)` with their data targets, plus `K`
/// neighbors per center when `k > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B x d` initial states.
    pub centers: Mat,
    /// One `B x d` matrix per rollout step.
    pub targets: Vec<Mat>,
    pub k: usize,
    /// `B*K x d`, center-major.
    pub offsets: Mat,
    /// One `B*K x d` matrix per rollout step.
    pub nbr_targets: Vec<Mat>,
}

impl Batch {
    pub fn n_centers(&self) -> usize {
        self.centers.rows()
    }

    /// States that enter the model: centers plus their neighbors.
    pub fn n_states(&self) -> usize {
        self.n_centers() * (self.k + 1)
    }

    /// Segments starting at `starts`, without neighbors.
    pub fn segments(ds: &TrajectoryDataset, starts: &[(usize, usize)], horizon: usize) -> Result<Batch> {
        Self::segments_from(&ds.states, ds.m, ds.d, starts, horizon)
    }

    fn segments_from(
        states: &[f64],
        m: usize,
        d: usize,
        starts: &[(usize, usize)],
        horizon: usize,
    ) -> Result<Batch> {
        let at = |i: usize, j: usize| &states[(i * m + j) * d..(i * m + j + 1) * d];
        if let Some(&(i, j)) = starts.iter().find(|&&(_, j)| j + horizon >= m) {
            return Err(Error::Batch(format!(
                "segment ({i}, {j}) runs past the end of its trajectory"
            )));
        }
        let centers = Mat::from_rows(&starts.iter().map(|&(i, j)| at(i, j)).collect::<Vec<_>>());
        let targets = (1..=horizon)
            .map(|s| Mat::from_rows(&starts.iter().map(|&(i, j)| at(i, j + s)).collect::<Vec<_>>()))
            .collect();
        Ok(Batch {
            centers,
            targets,
            k: 0,
            offsets: Mat::zeros(0, d),
            nbr_targets: Vec::new(),
        })
    }

    /// Centers with explicit neighbor lists (`k` entries each), all given as
    /// `(trajectory, time)` pairs.
    pub fn neighborhoods(
        ds: &TrajectoryDataset,
        starts: &[(usize, usize)],
        neighbors: &[Vec<(usize, usize)>],
        horizon: usize,
    ) -> Result<Batch> {
        let mut batch = Self::segments(ds, starts, horizon)?;
        let k = neighbors.first().map_or(0, Vec::len);
        if k < 2 || neighbors.len() != starts.len() || neighbors.iter().any(|n| n.len() != k) {
            return Err(Error::Batch("every center needs the same K >= 2 neighbors".into()));
        }
        let flat: Vec<(usize, usize)> = neighbors.iter().flatten().copied().collect();
        let nb = Self::segments(ds, &flat, horizon)?;
        let mut offsets = nb.centers;
        for (r, &(i, j)) in starts.iter().enumerate() {
            let c = ds.state(i, j);
            for q in 0..k {
                for (o, cv) in offsets.row_mut(r * k + q).iter_mut().zip(c) {
                    *o -= cv;
                }
            }
        }
        batch.k = k;
        batch.offsets = offsets;
        batch.nbr_targets = nb.targets;
        Ok(batch)
    }

    /// Contiguous groups of at most `size` centers, order preserved.
    pub fn chunks(&self, size: usize) -> Vec<Batch> {
        let b = self.n_centers();
        let d = self.centers.cols();
        let size = size.max(1);
        let rows = |m: &Mat, lo: usize, hi: usize| {
            Mat::from_vec(hi - lo, d, m.as_slice()[lo * d..hi * d].to_vec())
        };
        (0..b)
            .step_by(size)
            .map(|lo| {
                let hi = (lo + size).min(b);
                let (klo, khi) = (lo * self.k, hi * self.k);
                Batch {
                    centers: rows(&self.centers, lo, hi),
                    targets: self.targets.iter().map(|t| rows(t, lo, hi)).collect(),
                    k: self.k,
                    offsets: rows(&self.offsets, klo, khi),
                    nbr_targets: self.nbr_targets.iter().map(|t| rows(t, klo, khi)).collect(),
                }
            })
            .collect()
    }
}

/// Segment starts whose horizon fits, in `(trajectory, time)` order.
pub fn segment_starts(n: usize, m: usize, horizon: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..m.saturating_sub(horizon)).map(move |j| (i, j)))
        .collect()
}

/// `count` segments drawn uniformly (with replacement) from all valid starts.
pub fn sample_segments<R: Rng>(
    ds: &TrajectoryDataset,
    count: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Batch> {
    let per_traj = ds.m.saturating_sub(horizon);
    if per_traj == 0 || ds.n == 0 {
        return Err(Error::Batch("trajectories are shorter than the rollout horizon".into()));
    }
    let starts: Vec<(usize, usize)> = (0..count)
        .map(|_| {
            let g = rng.gen_range(0..ds.n * per_traj);
            (g / per_traj, g % per_traj)
        })
        .collect();
    Batch::segments(ds, &starts, horizon)
}

/// `count` distinct eligible centers (fewer if not enough exist), each with
/// `k` members drawn without replacement.
pub fn sample_neighborhoods<R: Rng>(
    ds: &TrajectoryDataset,
    cover: &NeighborCover,
    eligible: &[usize],
    count: usize,
    k: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Batch> {
    if eligible.is_empty() {
        return Err(Error::Batch(format!("no center has at least {k} neighbors")));
    }
    if cover.horizon < horizon {
        return Err(Error::Batch(format!(
            "cover horizon {} is shorter than the rollout horizon {horizon}",
            cover.horizon
        )));
    }
    let picks = index::sample(rng, eligible.len(), count.min(eligible.len()));
    let mut starts = Vec::with_capacity(picks.len());
    let mut nbrs = Vec::with_capacity(picks.len());
    for p in picks.iter() {
        let pos = eligible[p];
        starts.push(cover.split_index(cover.centers[pos]));
        let members = &cover.members[pos];
        let chosen = index::sample(rng, members.len(), k);
        nbrs.push(chosen.iter().map(|q| cover.split_index(members[q])).collect());
    }
    Batch::neighborhoods(ds, &starts, &nbrs, horizon)
}

/// Weighted loss sums for one batch: `traj_w * sum of squared errors +
/// nbhd_w * sum of per-center MMD^2`, over all rollout steps.
pub struct LossTerms<T> {
    pub total: T,
    pub traj_sum: f64,
    pub nbhd_sum: f64,
}

pub fn batch_loss<T: BlockReduce>(
    layers: &[(T::Param, T::Param)],
    proto: &T,
    batch: &Batch,
    roll: &RolloutSettings,
    kernel: &KernelConfig,
    traj_w: f64,
    nbhd_w: f64,
) -> Result<LossTerms<T>> {
    let c0 = proto.constant_like(batch.centers.clone());
    let use_nbhd = batch.k > 0 && nbhd_w != 0.0;
    let (centers, nbrs) = if use_nbhd {
        let off = proto.constant_like(batch.offsets.clone());
        rollout_neighborhood(
            layers,
            &c0,
            &off,
            roll.horizon,
            roll.dt,
            roll.n_sub,
            roll.taylor_order,
        )?
    } else {
        (rollout_center(layers, &c0, roll.horizon, roll.dt, roll.n_sub)?, Vec::new())
    };
    let mut traj = None::<T>;
    for (pred, target) in centers.iter().zip(&batch.targets) {
        let e = pred.sub(&proto.constant_like(target.clone())).square().sum();
        traj = Some(match traj {
            None => e,
            Some(acc) => acc.add(&e),
        });
    }
    let traj = traj.expect("horizon is positive");
    let traj_sum = traj.value()[(0, 0)];
    let mut total = traj.scale(traj_w);
    let mut nbhd_sum = 0.0;
    if use_nbhd {
        let obj = Rc::new(Mmd2Objective {
            kernel: kernel.clone(),
        });
        for (pred, target) in nbrs.iter().zip(&batch.nbr_targets) {
            let data = proto.constant_like(target.clone());
            let m = data.reduce_blocks(pred, batch.k, obj.clone());
            nbhd_sum += m.value()[(0, 0)];
            total = total.add(&m.scale(nbhd_w));
        }
    }
    Ok(LossTerms {
        total,
        traj_sum,
        nbhd_sum,
    })
}

/// Mean squared rollout error and mean MMD^2 of a batch, without gradients.
pub fn loss_parts(
    model: &MlpVectorField,
    batch: &Batch,
    roll: &RolloutSettings,
    kernel: &KernelConfig,
) -> Result<(f64, f64)> {
    let norm = (batch.n_centers() * roll.horizon) as f64;
    let t = batch_loss(&model.layers(), &Mat::zeros(1, 1), batch, roll, kernel, 1.0, 1.0)?;
    Ok((t.traj_sum / norm, t.nbhd_sum / norm))
}

/// Mean over segments and steps of the squared L2 rollout error.
pub fn trajectory_loss(model: &MlpVectorField, batch: &Batch, roll: &RolloutSettings) -> Result<f64> {
    let norm = (batch.n_centers() * roll.horizon) as f64;
    let t = batch_loss(
        &model.layers(),
        &Mat::zeros(1, 1),
        batch,
        roll,
        &KernelConfig::default(),
        1.0,
        0.0,
    )?;
    Ok(t.traj_sum / norm)
}

/// Mean over centers and steps of MMD^2 between data-evolved and
/// model-reconstructed neighbor clouds.
pub fn neighborhood_loss(
    model: &MlpVectorField,
    batch: &Batch,
    roll: &RolloutSettings,
    kernel: &KernelConfig,
) -> Result<f64> {
    if batch.k < 2 {
        return Err(Error::Batch("batch carries no neighborhoods".into()));
    }
    Ok(loss_parts(model, batch, roll, kernel)?.1)
}

/// Value and parameter gradient (flattened like [`MlpVectorField::flat_params`])
/// of `traj + lambda * nbhd`, each term a mean over centers and steps. The
/// batch is split into `chunk` sized groups, each on its own tape, and the
/// pieces are summed in group order.
pub struct LossGrad {
    pub loss: f64,
    pub traj: f64,
    pub nbhd: f64,
    pub grad: Vec<f64>,
}

pub fn loss_and_grad(
    model: &MlpVectorField,
    batch: &Batch,
    roll: &RolloutSettings,
    kernel: &KernelConfig,
    lambda: f64,
    chunk: usize,
) -> Result<LossGrad> {
    use rayon::prelude::*;
    let norm = (batch.n_centers() * roll.horizon) as f64;
    let layers = model.layers();
    let parts: Vec<Result<(f64, f64, f64, Vec<f64>)>> = batch
        .chunks(chunk)
        .par_iter()
        .map(|piece| {
            let tape = Tape::new();
            let vars: Vec<(Var, Var)> = layers
                .iter()
                .map(|(w, b)| (tape.variable(w.clone()), tape.variable(b.clone())))
                .collect();
            let proto = tape.constant(Mat::zeros(1, 1));
            let t = batch_loss(&vars, &proto, piece, roll, kernel, 1.0 / norm, lambda / norm)?;
            let value = t.total.value()[(0, 0)];
            let g = tape.gradients(&t.total);
            let mut flat = Vec::with_capacity(model.param_count());
            for (w, b) in &vars {
                flat.extend_from_slice(g.wrt(w).as_slice());
                flat.extend_from_slice(g.wrt(b).as_slice());
            }
            Ok((value, t.traj_sum, t.nbhd_sum, flat))
        })
        .collect();
    let mut out = LossGrad {
        loss: 0.0,
        traj: 0.0,
        nbhd: 0.0,
        grad: vec![0.0; model.param_count()],
    };
    for part in parts {
        let (v, ts, ns, g) = part?;
        out.loss += v;
        out.traj += ts / norm;
        out.nbhd += ns / norm;
        for (a, b) in out.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(out)
}
