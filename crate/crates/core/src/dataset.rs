//! Trajectory datasets: on-attractor sampling, timescale estimation,
//! simulation, normalization, noise, and the on-disk format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate_adaptive, StepControl};
use crate::io;
use crate::linalg::Mat;
use crate::systems::{AffineTransform, SystemField, SystemName, SystemSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split '{other}'"))),
        }
    }
}

/// Stable 64-bit seed for a named purpose under a master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `n` initial conditions from the system's initial distribution and
/// integrates each through the burn-in period.
pub fn sample_on_attractor(spec: &SystemSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut r = rng(seed);
    let starts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            spec.init_mean
                .iter()
                .zip(&spec.init_std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    m + s * z
                })
                .collect()
        })
        .collect();
    starts
        .par_iter()
        .enumerate()
        .map(|(index, u0)| {
            let rhs = |u: &[f64], out: &mut [f64]| spec.rhs(u, out);
            integrate_adaptive(
                rhs,
                u0,
                (0.0, spec.burn_in),
                StepControl::generation(),
                &[spec.burn_in],
            )
            .map(|mut t| t.remove(0))
            .map_err(|e| Error::Generation {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Simulates each initial condition and returns the states at `times`
/// (`n x times.len() x d`, flattened).
pub fn simulate(spec: &SystemSpec, ics: &[Vec<f64>], times: &[f64]) -> Result<Vec<f64>> {
    let t_end = *times.last().ok_or_else(|| Error::arg("empty time grid"))?;
    let t_end = if t_end > 0.0 { t_end } else { 1.0 };
    let trajs: Vec<Vec<Vec<f64>>> = ics
        .par_iter()
        .enumerate()
        .map(|(index, u0)| {
            let rhs = |u: &[f64], out: &mut [f64]| spec.rhs(u, out);
            integrate_adaptive(rhs, u0, (0.0, t_end), StepControl::generation(), times).map_err(
                |e| Error::Generation {
                    index,
                    source: Box::new(e),
                },
            )
        })
        .collect::<Result<_>>()?;
    Ok(trajs.into_iter().flatten().flatten().collect())
}

/// How per-dimension peak periods are combined into one timescale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodAggregate {
    Median,
    /// The fastest prominent oscillation over all dimensions.
    #[default]
    Shortest,
}

/// Timescale estimation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub horizon: f64,
    pub fft_len: usize,
    pub smoothing_bins: f64,
    pub aggregate: PeriodAggregate,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            horizon: 100.0,
            fft_len: 8192,
            smoothing_bins: 2.0,
            aggregate: PeriodAggregate::default(),
        }
    }
}

/// Characteristic timescale from the averaged spectra of `n_traj`
/// on-attractor trajectories simulated over `horizon`.
pub fn estimate_timescale(spec: &SystemSpec, n_traj: usize, horizon: f64, seed: u64) -> Result<f64> {
    let cfg = SpectrumConfig {
        horizon,
        ..SpectrumConfig::default()
    };
    estimate_timescale_with(spec, n_traj, seed, &cfg)
}

pub fn estimate_timescale_with(
    spec: &SystemSpec,
    n_traj: usize,
    seed: u64,
    cfg: &SpectrumConfig,
) -> Result<f64> {
    if n_traj == 0 {
        return Err(Error::arg("need at least one pilot trajectory"));
    }
    if cfg.fft_len < 4096 || !(cfg.horizon > 0.0) {
        return Err(Error::arg("pilot needs at least 4096 samples over a positive horizon"));
    }
    let ics = sample_on_attractor(spec, n_traj, seed)?;
    let sample_dt = cfg.horizon / cfg.fft_len as f64;
    let times: Vec<f64> = (0..cfg.fft_len).map(|k| k as f64 * sample_dt).collect();
    let flat = simulate(spec, &ics, &times)?;
    let d = spec.dim;
    let signals: Vec<Vec<Vec<f64>>> = flat
        .chunks(cfg.fft_len * d)
        .map(|traj| (0..d).map(|c| traj.iter().skip(c).step_by(d).copied().collect()).collect())
        .collect();
    let periods = peak_periods(&signals, sample_dt, cfg.smoothing_bins)?;
    Ok(aggregate_periods(periods, cfg.aggregate))
}

/// Timescale from sampled signals laid out `[trajectory][dimension][time]`:
/// the median over dimensions of the reciprocal of the most prominent peak
/// of the trajectory-averaged magnitude spectrum.
pub fn timescale_from_signals(
    signals: &[Vec<Vec<f64>>],
    sample_dt: f64,
    smoothing_bins: f64,
) -> Result<f64> {
    let periods = peak_periods(signals, sample_dt, smoothing_bins)?;
    Ok(aggregate_periods(periods, PeriodAggregate::Median))
}

pub fn aggregate_periods(mut periods: Vec<f64>, rule: PeriodAggregate) -> f64 {
    periods.sort_by(f64::total_cmp);
    let n = periods.len();
    match rule {
        PeriodAggregate::Shortest => periods[0],
        PeriodAggregate::Median if n % 2 == 1 => periods[n / 2],
        PeriodAggregate::Median => 0.5 * (periods[n / 2 - 1] + periods[n / 2]),
    }
}

/// Period of the most prominent spectral peak of each dimension that has
/// one; an error if none does.
pub fn peak_periods(
    signals: &[Vec<Vec<f64>>],
    sample_dt: f64,
    smoothing_bins: f64,
) -> Result<Vec<f64>> {
    let first = signals
        .first()
        .ok_or_else(|| Error::Estimation("no signals".into()))?;
    let d = first.len();
    let len = first.first().map_or(0, Vec::len);
    if len < 8 {
        return Err(Error::Estimation("signals too short".into()));
    }
    let nfft = len;
    let half = nfft / 2;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);

    let mut periods = Vec::new();
    for c in 0..d {
        let mut avg = vec![0.0; half + 1];
        let mut any_signal = false;
        for traj in signals {
            let x = &traj[c];
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if x.iter().any(|v| (v - mean).abs() > 1e-10 * scale) {
                any_signal = true;
            }
            let mut buf: Vec<Complex<f64>> =
                x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
            fft.process(&mut buf);
            for (a, z) in avg.iter_mut().zip(&buf) {
                *a += z.norm() / signals.len() as f64;
            }
        }
        if !any_signal {
            continue;
        }
        let smooth = gaussian_smooth(&avg, smoothing_bins);
        if let Some(k) = most_prominent_peak(&smooth[1..=half]) {
            let bin = k + 1;
            periods.push(nfft as f64 * sample_dt / bin as f64);
        }
    }
    if periods.is_empty() {
        return Err(Error::Estimation("no spectral peak in any dimension".into()));
    }
    Ok(periods)
}

/// Gaussian filter with reflecting boundaries, truncated at four standard
/// deviations.
pub fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || x.is_empty() {
        return x.to_vec();
    }
    let radius = (4.0 * sigma + 0.5) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let n = x.len() as isize;
    let reflect = |mut i: isize| -> usize {
        // d c b a | a b c d | d c b a
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    (0..n)
        .map(|i| {
            weights
                .iter()
                .zip(-radius..=radius)
                .map(|(w, k)| w * x[reflect(i + k)])
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Index of the local maximum with the largest topographic prominence.
pub fn most_prominent_peak(x: &[f64]) -> Option<usize> {
    let n = x.len();
    let mut best: Option<(usize, f64)> = None;
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // Walk across a plateau, if any.
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let peak = (i + j) / 2;
                let p = prominence(x, peak);
                if p > 0.0 && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((peak, p));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    best.map(|(k, _)| k)
}

fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for i in (0..peak).rev() {
        if x[i] > h {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Data-generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub n_traj: usize,
    pub n_points: usize,
    /// Sampling interval as a fraction of the timescale.
    pub dt_frac: f64,
    /// Pilot trajectories for timescale estimation (`0` means `n_traj`).
    pub pilot_traj: usize,
    pub spectrum: SpectrumConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_traj: 50,
            n_points: 1000,
            dt_frac: 0.01,
            pilot_traj: 0,
            spectrum: SpectrumConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.n_points < 2 {
            return Err(Error::arg("need at least one trajectory of two points"));
        }
        if !(self.dt_frac > 0.0) {
            return Err(Error::arg("dt_frac must be positive"));
        }
        Ok(())
    }
}

/// `n x m x d` states in normalized coordinates, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub system: SystemName,
    pub params: BTreeMap<String, f64>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub dt: f64,
    pub tau: f64,
    pub transform: AffineTransform,
    pub noise_std: f64,
    pub seed: u64,
    pub split: Split,
    pub states: Vec<f64>,
    pub clean: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    system: SystemName,
    params: BTreeMap<String, f64>,
    n: usize,
    m: usize,
    d: usize,
    dt: f64,
    tau: f64,
    transform: AffineTransform,
    noise_std: f64,
    seed: u64,
    split: Split,
    has_clean: bool,
}

impl TrajectoryDataset {
    pub fn state(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.m + j) * self.d;
        &self.states[o..o + self.d]
    }

    pub fn trajectory(&self, i: usize) -> &[f64] {
        let o = i * self.m * self.d;
        &self.states[o..o + self.m * self.d]
    }

    /// Noise-free states; an error if the dataset was stored without them.
    pub fn clean_states(&self) -> Result<&[f64]> {
        self.clean
            .as_deref()
            .ok_or_else(|| Error::MissingClean(format!("{} split", self.split)))
    }

    /// All states as an `(n*m) x d` matrix, global index `i*m + j`.
    pub fn points(&self) -> Mat {
        Mat::from_vec(self.n * self.m, self.d, self.states.clone())
    }

    pub fn spec(&self) -> Result<SystemSpec> {
        SystemSpec::from_params(self.system, self.d, &self.params)
    }

    /// The ground-truth field in the dataset's normalized coordinates.
    pub fn ground_truth(&self) -> Result<SystemField> {
        Ok(SystemField::new(self.spec()?, self.transform.clone()))
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.n * self.m * self.d;
        if self.states.len() != len || self.clean.as_ref().is_some_and(|c| c.len() != len) {
            return Err(Error::arg("state array does not match n x m x d"));
        }
        if self.transform.dim() != self.d {
            return Err(Error::arg("transform dimension mismatch"));
        }
        if !self.states.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("dataset contains non-finite states"));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        io::ensure_dir(dir)?;
        let meta = Meta {
            format_version: FORMAT_VERSION,
            system: self.system,
            params: self.params.clone(),
            n: self.n,
            m: self.m,
            d: self.d,
            dt: self.dt,
            tau: self.tau,
            transform: self.transform.clone(),
            noise_std: self.noise_std,
            seed: self.seed,
            split: self.split,
            has_clean: self.clean.is_some(),
        };
        io::write_json(&dir.join("meta.json"), &meta)?;
        io::write_f64_le(&dir.join("states.bin"), &self.states)?;
        let clean_path = dir.join("clean.bin");
        match &self.clean {
            Some(c) => io::write_f64_le(&clean_path, c)?,
            None if clean_path.exists() => {
                std::fs::remove_file(&clean_path).map_err(|e| Error::io(&clean_path, e))?
            }
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: Meta = io::read_json(&meta_path)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::format(
                &meta_path,
                format!("unsupported format version {}", meta.format_version),
            ));
        }
        let len = meta.n * meta.m * meta.d;
        let states = io::read_f64_le(&dir.join("states.bin"), Some(len))?;
        let clean_path = dir.join("clean.bin");
        let clean = if meta.has_clean && clean_path.exists() {
            Some(io::read_f64_le(&clean_path, Some(len))?)
        } else {
            None
        };
        let ds = TrajectoryDataset {
            system: meta.system,
            params: meta.params,
            n: meta.n,
            m: meta.m,
            d: meta.d,
            dt: meta.dt,
            tau: meta.tau,
            transform: meta.transform,
            noise_std: meta.noise_std,
            seed: meta.seed,
            split: meta.split,
            states,
            clean,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Per-dimension mean and population standard deviation of flattened
/// `d`-vectors.
pub fn fit_transform(flat: &[f64], d: usize) -> Result<AffineTransform> {
    let n = flat.len() / d;
    if n == 0 {
        return Err(Error::arg("no states to normalize"));
    }
    let mut mean = vec![0.0; d];
    for row in flat.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for row in flat.chunks_exact(d) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    AffineTransform::new(mean, std)
}

/// Generates one split. The train split fits its own transform; val and test
/// must be given the train transform.
pub fn generate_dataset(
    spec: &SystemSpec,
    split: Split,
    noise_std: f64,
    seed: u64,
    tau: f64,
    cfg: &GenerationConfig,
    train_transform: Option<&AffineTransform>,
) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::arg("noise_std must be a finite non-negative number"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg("timescale must be positive"));
    }
    if split != Split::Train && train_transform.is_none() {
        return Err(Error::Sequencing(format!(
            "the {split} split needs the train transform; generate train first"
        )));
    }
    let ics = sample_on_attractor(spec, cfg.n_traj, derive_seed(seed, &format!("{split}/init")))?;
    let dt = cfg.dt_frac * tau;
    let times: Vec<f64> = (0..cfg.n_points).map(|j| j as f64 * dt).collect();
    let raw = simulate(spec, &ics, &times)?;
    let d = spec.dim;
    let transform = match train_transform {
        Some(t) => t.clone(),
        None => fit_transform(&raw, d)?,
    };
    let clean: Vec<f64> = raw
        .chunks_exact(d)
        .flat_map(|row| transform.apply(row))
        .collect();
    let states = if noise_std > 0.0 && split != Split::Test {
        let mut r = rng(derive_seed(seed, &format!("{split}/noise")));
        clean
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut r);
                v + noise_std * z
            })
            .collect()
    } else {
        clean.clone()
    };
    let ds = TrajectoryDataset {
        system: spec.name(),
        params: spec.params(),
        n: cfg.n_traj,
        m: cfg.n_points,
        d,
        dt,
        tau,
        transform,
        noise_std: if split == Split::Test { 0.0 } else { noise_std },
        seed,
        split,
        states,
        clean: Some(clean),
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: TrajectoryDataset,
    pub val: TrajectoryDataset,
    pub test: TrajectoryDataset,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &TrajectoryDataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Estimates the timescale, then generates train, val and test in order.
pub fn generate_splits(
    spec: &SystemSpec,
    noise_std: f64,
    seed: u64,
    cfg: &GenerationConfig,
) -> Result<DatasetSplits> {
    cfg.validate()?;
    let pilot = if cfg.pilot_traj == 0 { cfg.n_traj } else { cfg.pilot_traj };
    let tau = estimate_timescale_with(spec, pilot, derive_seed(seed, "timescale"), &cfg.spectrum)?;
    log::info!("{}: estimated timescale {tau:.6}", spec.name());
    let train = generate_dataset(spec, Split::Train, noise_std, seed, tau, cfg, None)?;
    let t = train.transform.clone();
    let val = generate_dataset(spec, Split::Val, noise_std, seed, tau, cfg, Some(&t))?;
    let test = generate_dataset(spec, Split::Test, noise_std, seed, tau, cfg, Some(&t))?;
    Ok(DatasetSplits { train, val, test })
}
