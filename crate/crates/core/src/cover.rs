//! Annulus neighborhoods of training states: an exact KD-tree, radius
//! calibration, and the cached cover format.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rng, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::Mat;

const LEAF_SIZE: usize = 16;

/// Closed annulus test on squared distances.
#[inline]
pub fn in_annulus(d2: f64, r_min: f64, r_max: f64) -> bool {
    d2 >= r_min * r_min && d2 <= r_max * r_max
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf,
    Split { left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct Node {
    start: usize,
    end: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    kind: NodeKind,
}

/// Exact spatial index for range and annulus queries.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    /// Points reordered to match `ids`.
    coords: Vec<f64>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &Mat) -> Self {
        let (n, d) = points.shape();
        let mut ids: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(points, &mut ids, 0, n, &mut nodes);
        }
        let mut coords = Vec::with_capacity(n * d);
        for &i in &ids {
            coords.extend_from_slice(points.row(i));
        }
        KdTree {
            dim: d,
            coords,
            ids,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// All indices within distance `r` of `q` (inclusive), ascending.
    pub fn range(&self, q: &[f64], r: f64) -> Vec<usize> {
        self.annulus(q, 0.0, r)
    }

    /// All indices with `r_min <= |p - q| <= r_max`, ascending.
    pub fn annulus(&self, q: &[f64], r_min: f64, r_max: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(q, r_min, r_max, &mut |i| out.push(i));
        out.sort_unstable();
        out
    }

    pub fn annulus_count(&self, q: &[f64], r_min: f64, r_max: f64) -> usize {
        let mut count = 0;
        self.visit(q, r_min, r_max, &mut |_| count += 1);
        count
    }

    fn visit(&self, q: &[f64], r_min: f64, r_max: f64, emit: &mut impl FnMut(usize)) {
        assert_eq!(q.len(), self.dim, "query dimension");
        if self.nodes.is_empty() || r_max < r_min {
            return;
        }
        let (in2, out2) = (r_min * r_min, r_max * r_max);
        let mut stack = vec![0usize];
        while let Some(k) = stack.pop() {
            let node = &self.nodes[k];
            let (near, far) = box_distances(q, &node.lo, &node.hi);
            if near > out2 || far < in2 {
                continue;
            }
            match node.kind {
                NodeKind::Split { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
                NodeKind::Leaf => {
                    for p in node.start..node.end {
                        let x = &self.coords[p * self.dim..(p + 1) * self.dim];
                        let d2: f64 = x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                        if d2 >= in2 && d2 <= out2 {
                            emit(self.ids[p]);
                        }
                    }
                }
            }
        }
    }
}

fn build_node(points: &Mat, ids: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let d = points.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for &i in &ids[start..end] {
        for (c, &v) in points.row(i).iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    let me = nodes.len();
    nodes.push(Node {
        start,
        end,
        lo: lo.clone(),
        hi: hi.clone(),
        kind: NodeKind::Leaf,
    });
    let count = end - start;
    let (axis, spread) = (0..d)
        .map(|c| (c, hi[c] - lo[c]))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if count <= LEAF_SIZE || spread <= 0.0 {
        return me;
    }
    let mid = count / 2;
    ids[start..end].select_nth_unstable_by(mid, |&a, &b| {
        points[(a, axis)]
            .total_cmp(&points[(b, axis)])
            .then(a.cmp(&b))
    });
    let left = build_node(points, ids, start, start + mid, nodes);
    let right = build_node(points, ids, start + mid, end, nodes);
    nodes[me].kind = NodeKind::Split { left, right };
    me
}

/// Squared distances from `q` to the nearest and farthest points of a box.
fn box_distances(q: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut near = 0.0;
    let mut far = 0.0;
    for ((&x, &l), &h) in q.iter().zip(lo).zip(hi) {
        let dn = if x < l {
            l - x
        } else if x > h {
            x - h
        } else {
            0.0
        };
        let df = (x - l).abs().max((x - h).abs());
        near += dn * dn;
        far += df * df;
    }
    (near, far)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub target_frac: f64,
    pub multiplier: f64,
    /// Number of randomly sampled probe centers.
    pub probes: usize,
    /// Relative tolerance on the mean occupancy.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            target_frac: 0.05,
            multiplier: 8.0,
            probes: 512,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

/// `r_min = multiplier * noise_std`; `r_max` is bisected until the mean
/// number of points in the closed annulus around the probe centers (the
/// center itself included when `r_min = 0`) is within tolerance of
/// `target_frac * N`.
pub fn calibrate_radii(points: &Mat, noise_std: f64, cfg: &CalibrationConfig) -> Result<(f64, f64)> {
    let tree = KdTree::build(points);
    calibrate_with_tree(&tree, points, noise_std, cfg)
}

pub fn calibrate_with_tree(
    tree: &KdTree,
    points: &Mat,
    noise_std: f64,
    cfg: &CalibrationConfig,
) -> Result<(f64, f64)> {
    if !(cfg.target_frac > 0.0 && cfg.target_frac < 1.0) {
        return Err(Error::arg("target_frac must lie in (0, 1)"));
    }
    if !(noise_std >= 0.0) || !(cfg.multiplier >= 0.0) {
        return Err(Error::arg("noise_std and multiplier must be non-negative"));
    }
    let n = points.rows();
    if n == 0 {
        return Err(Error::Calibration("no points".into()));
    }
    let r_min = cfg.multiplier * noise_std;
    let probes: Vec<usize> = if n <= cfg.probes {
        (0..n).collect()
    } else {
        let mut r = rng(cfg.seed);
        let mut p = index::sample(&mut r, n, cfg.probes).into_vec();
        p.sort_unstable();
        p
    };
    let target = cfg.target_frac * n as f64;
    let mean_count = |r_max: f64| -> f64 {
        let total: usize = probes
            .par_iter()
            .map(|&i| tree.annulus_count(points.row(i), r_min, r_max))
            .sum();
        total as f64 / probes.len() as f64
    };

    let mut lo_b = vec![f64::INFINITY; points.cols()];
    let mut hi_b = vec![f64::NEG_INFINITY; points.cols()];
    for r in 0..n {
        for (c, &v) in points.row(r).iter().enumerate() {
            lo_b[c] = lo_b[c].min(v);
            hi_b[c] = hi_b[c].max(v);
        }
    }
    let diameter = lo_b
        .iter()
        .zip(&hi_b)
        .map(|(l, h)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt();
    let mut lo = r_min;
    let mut hi = r_min.max(diameter) * (1.0 + 1e-12) + 1e-12;
    let within = |c: f64| (c - target).abs() <= cfg.tolerance * target;
    if mean_count(hi) < target * (1.0 - cfg.tolerance) {
        return Err(Error::Calibration(format!(
            "even r_max = {hi:.4} holds fewer than {target:.1} points on average; \
             r_min = {r_min:.4} is too large for the attractor"
        )));
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = mean_count(mid);
        let gap = (c - target).abs();
        if gap < best.0 {
            best = (gap, mid);
        }
        if within(c) {
            return Ok((r_min, mid));
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    log::warn!(
        "occupancy target not met within tolerance; using r_max = {} (off by {:.3} points)",
        best.1,
        best.0
    );
    Ok((r_min, best.1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyStats {
    pub n_total: usize,
    pub n_centers: usize,
    pub centers_with_neighbors: usize,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    /// `mean / n_total`.
    pub mean_frac: f64,
}

/// Annulus neighbor lists for every center whose horizon fits in the data.
/// Indices are global, `i * m + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborCover {
    pub r_min: f64,
    pub r_max: f64,
    pub horizon: usize,
    pub n_traj: usize,
    pub m: usize,
    pub centers: Vec<u32>,
    pub members: Vec<Vec<u32>>,
}

const MAGIC: &[u8; 4] = b"NBCV";
const COVER_VERSION: u32 = 1;

impl NeighborCover {
    pub fn n_total(&self) -> usize {
        self.n_traj * self.m
    }

    pub fn split_index(&self, g: u32) -> (usize, usize) {
        (g as usize / self.m, g as usize % self.m)
    }

    pub fn stats(&self) -> OccupancyStats {
        let counts: Vec<usize> = self.members.iter().map(Vec::len).collect();
        let sum: usize = counts.iter().sum();
        let mean = if counts.is_empty() {
            0.0
        } else {
            sum as f64 / counts.len() as f64
        };
        OccupancyStats {
            n_total: self.n_total(),
            n_centers: counts.len(),
            centers_with_neighbors: counts.iter().filter(|&&c| c > 0).count(),
            mean,
            min: counts.iter().copied().min().unwrap_or(0),
            max: counts.iter().copied().max().unwrap_or(0),
            mean_frac: mean / self.n_total().max(1) as f64,
        }
    }

    /// Positions (into `centers`) of centers with at least `k` members.
    pub fn eligible(&self, k: usize) -> Vec<usize> {
        (0..self.centers.len())
            .filter(|&c| self.members[c].len() >= k.max(1))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&COVER_VERSION.to_le_bytes());
        out.extend_from_slice(&self.r_min.to_le_bytes());
        out.extend_from_slice(&self.r_max.to_le_bytes());
        out.extend_from_slice(&(self.horizon as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_traj as u32).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.centers.len() as u64).to_le_bytes());
        for (c, list) in self.centers.iter().zip(&self.members) {
            io::put_varint(&mut out, u64::from(*c));
            io::put_varint(&mut out, list.len() as u64);
            for &g in list {
                io::put_varint(&mut out, u64::from(g));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        if bytes.len() < 40 || &bytes[..4] != MAGIC {
            return Err(bad("not a cover file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        if u32_at(4) != COVER_VERSION {
            return Err(bad("unsupported cover version"));
        }
        let r_min = f64_at(8);
        let r_max = f64_at(16);
        let horizon = u32_at(24) as usize;
        let n_traj = u32_at(28) as usize;
        let m = u32_at(32) as usize;
        let n_centers = u64::from_le_bytes(bytes[36..44].try_into().map_err(|_| bad("truncated"))?);
        let mut pos = 44;
        let mut next = || io::get_varint(bytes, &mut pos).ok_or_else(|| bad("truncated cover"));
        let mut centers = Vec::new();
        let mut members = Vec::new();
        for _ in 0..n_centers {
            centers.push(next()? as u32);
            let count = next()? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                list.push(next()? as u32);
            }
            members.push(list);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(NeighborCover {
            r_min,
            r_max,
            horizon,
            n_traj,
            m,
            centers,
            members,
        })
    }

    /// Writes `cover.bin`, `cover.json` and `occupancy.csv` into `dir`.
    pub fn save(&self, dir: &Path, extra: &CoverSummaryExtra) -> Result<()> {
        io::ensure_dir(dir)?;
        let path = dir.join("cover.bin");
        std::fs::write(&path, self.to_bytes()).map_err(|e| Error::io(&path, e))?;
        let summary = CoverSummary {
            r_min: self.r_min,
            r_max: self.r_max,
            horizon: self.horizon,
            n_traj: self.n_traj,
            m: self.m,
            noise_std: extra.noise_std,
            target_frac: extra.target_frac,
            multiplier: extra.multiplier,
            occupancy: self.stats(),
        };
        io::write_json(&dir.join("cover.json"), &summary)?;
        let mut csv = String::from("center,traj,time,count\n");
        for (c, list) in self.centers.iter().zip(&self.members) {
            let (i, j) = self.split_index(*c);
            let _ = writeln!(csv, "{c},{i},{j},{}", list.len());
        }
        io::write_text(&dir.join("occupancy.csv"), &csv)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("cover.bin");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_bytes(&bytes, &path)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverSummaryExtra {
    pub noise_std: f64,
    pub target_frac: f64,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverSummary {
    pub r_min: f64,
    pub r_max: f64,
    pub horizon: usize,
    pub n_traj: usize,
    pub m: usize,
    pub noise_std: f64,
    pub target_frac: f64,
    pub multiplier: f64,
    pub occupancy: OccupancyStats,
}

/// Cover over `n_traj` trajectories of `m` points stored row-wise in
/// `points` (global index `i * m + j`).
pub fn build_cover_from_points(
    points: &Mat,
    n_traj: usize,
    m: usize,
    radii: (f64, f64),
    horizon: usize,
) -> Result<NeighborCover> {
    let (r_min, r_max) = radii;
    if horizon == 0 || horizon >= m {
        return Err(Error::arg(format!("horizon must lie in 1..{m}")));
    }
    if points.rows() != n_traj * m {
        return Err(Error::arg("point count does not match n_traj x m"));
    }
    if !(r_min >= 0.0 && r_max > r_min) {
        return Err(Error::arg("need 0 <= r_min < r_max"));
    }
    let last = m - 1 - horizon;
    let eligible: Vec<u32> = (0..n_traj)
        .flat_map(|i| (0..=last).map(move |j| (i * m + j) as u32))
        .collect();
    let sub = Mat::from_rows(
        &eligible
            .iter()
            .map(|&g| points.row(g as usize).to_vec())
            .collect::<Vec<_>>(),
    );
    let tree = KdTree::build(&sub);
    let members: Vec<Vec<u32>> = (0..eligible.len())
        .into_par_iter()
        .map(|c| {
            tree.annulus(sub.row(c), r_min, r_max)
                .into_iter()
                .filter(|&k| k != c)
                .map(|k| eligible[k])
                .collect()
        })
        .collect();
    let cover = NeighborCover {
        r_min,
        r_max,
        horizon,
        n_traj,
        m,
        centers: eligible,
        members,
    };
    if cover.members.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCover);
    }
    Ok(cover)
}

pub fn build_cover(ds: &TrajectoryDataset, radii: (f64, f64), horizon: usize) -> Result<NeighborCover> {
    build_cover_from_points(&ds.points(), ds.n, ds.m, radii, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn line(n: usize) -> Mat {
        Mat::from_vec(n, 1, (0..n).map(|i| i as f64).collect())
    }

    #[test]
    fn radius_zero_returns_duplicates() {
        let pts = Mat::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [2.0, 0.0]]);
        let tree = KdTree::build(&pts);
        assert_eq!(tree.range(&[0.0, 0.0], 0.0), vec![0, 2]);
        assert_eq!(tree.range(&[0.0, 0.0], 10.0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn random_queries_match_brute_force() {
        let mut r = rng(3);
        let n = 2000;
        let data: Vec<f64> = (0..n * 3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let pts = Mat::from_vec(n, 3, data);
        let tree = KdTree::build(&pts);
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| r.gen_range(-1.2..1.2)).collect();
            let (a, b) = (r.gen_range(0.0..0.3), r.gen_range(0.3..0.8));
            let brute: Vec<usize> = (0..n)
                .filter(|&i| {
                    let d2: f64 = pts.row(i).iter().zip(&q).map(|(x, y)| (x - y) * (x - y)).sum();
                    in_annulus(d2, a, b)
                })
                .collect();
            assert_eq!(tree.annulus(&q, a, b), brute);
            assert_eq!(tree.annulus_count(&q, a, b), brute.len());
        }
    }

    #[test]
    fn one_dimensional_annulus_example() {
        let cover = build_cover_from_points(&line(10), 1, 10, (1.5, 3.5), 1).unwrap();
        let pos = cover.centers.iter().position(|&c| c == 5).unwrap();
        assert_eq!(cover.members[pos], vec![2, 3, 7, 8]);
        assert!(cover.centers.iter().all(|&c| c <= 8));
    }

    #[test]
    fn grid_calibration_lands_near_two_and_a_half() {
        let cfg = CalibrationConfig::default();
        let (r_min, r_max) = calibrate_radii(&line(100), 0.0, &cfg).unwrap();
        assert_eq!(r_min, 0.0);
        assert!((2.0..3.0).contains(&r_max), "{r_max}");
    }

    #[test]
    fn larger_target_never_shrinks_radius() {
        let mut r = rng(8);
        let pts = Mat::from_vec(600, 2, (0..1200).map(|_| r.gen_range(0.0..1.0)).collect());
        let mut prev = 0.0;
        for frac in [0.02, 0.05, 0.1, 0.2] {
            let cfg = CalibrationConfig {
                target_frac: frac,
                ..Default::default()
            };
            let (_, r_max) = calibrate_radii(&pts, 0.0, &cfg).unwrap();
            assert!(r_max >= prev);
            prev = r_max;
        }
    }

    #[test]
    fn oversized_inner_radius_fails_to_bracket() {
        let res = calibrate_radii(&line(50), 100.0, &CalibrationConfig::default());
        assert!(matches!(res, Err(Error::Calibration(_))));
    }

    #[test]
    fn isolated_points_give_empty_cover() {
        let pts = Mat::from_vec(4, 1, vec![0.0, 10.0, 20.0, 30.0]);
        let res = build_cover_from_points(&pts, 1, 4, (0.0, 1.0), 1);
        assert!(matches!(res, Err(Error::EmptyCover)));
    }

    #[test]
    fn bytes_round_trip() {
        let cover = build_cover_from_points(&line(40), 2, 20, (0.5, 4.0), 3).unwrap();
        let bytes = cover.to_bytes();
        let back = NeighborCover::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, cover);
        assert!(NeighborCover::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }
}
