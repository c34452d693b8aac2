//! Dataset construction: intraday deseasonalization, zero-volume filtering,
//! lag-window assembly, and the time-ordered 70/10/20 split.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{Epoch, FeatureVector, Grid};
use crate::math::{fnv1a64, Mat};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.70, 0.10, 0.20);

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("seasonal slot {0} has no positive training observations")]
    EmptySeasonalSlot(usize),
    #[error("source feature grids are not aligned on the dataset grid")]
    SourceGridMismatch,
    #[error("need at least 10 instances to split, got {0}")]
    TooFewInstances(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file at line {0}")]
    MalformedDataset(usize),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Forecasting interval length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "1m")]
    M1,
    #[serde(rename = "5m")]
    M5,
    #[serde(rename = "10m")]
    M10,
}

impl Horizon {
    pub fn step_secs(&self) -> i64 {
        match self {
            Horizon::M1 => 60,
            Horizon::M5 => 300,
            Horizon::M10 => 600,
        }
    }

    pub fn slots_per_day(&self) -> usize {
        (SECONDS_PER_DAY / self.step_secs()) as usize
    }

    pub fn parse(s: &str) -> Option<Horizon> {
        match s {
            "1m" => Some(Horizon::M1),
            "5m" => Some(Horizon::M5),
            "10m" => Some(Horizon::M10),
            _ => None,
        }
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Horizon::M1 => write!(f, "1m"),
            Horizon::M5 => write!(f, "5m"),
            Horizon::M10 => write!(f, "10m"),
        }
    }
}

/// Per-slot average volume over the training span. Dividing by the slot
/// factor removes the diurnal pattern from the modeled target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    pub interval_secs: i64,
    /// One positive factor per intraday slot.
    pub values: Vec<f64>,
    /// Identifier of the span the profile was fitted on.
    pub fitted_on: String,
}

impl SeasonalProfile {
    pub fn slot_of(&self, t: Epoch) -> usize {
        (t.rem_euclid(SECONDS_PER_DAY) / self.interval_secs) as usize
    }

    pub fn factor(&self, t: Epoch) -> f64 {
        self.values[self.slot_of(t)]
    }
}

/// One modeling instance: the target interval, its raw and deseasonalized
/// volume, and the fully populated per-source lag windows (`d_s x h`, oldest
/// lag in column 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    pub t: Epoch,
    pub v: f64,
    pub a: f64,
    pub y: f64,
    pub windows: Vec<Mat>,
}

/// Contiguous, time-ordered train/validation/test subsequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ModelInstance>,
    pub validation: Vec<ModelInstance>,
    pub test: Vec<ModelInstance>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &ModelInstance> {
        self.train.iter().chain(self.validation.iter()).chain(self.test.iter())
    }
}

/// Everything downstream consumers need to interpret the instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub horizon: Horizon,
    pub window_h: usize,
    pub n_sources: usize,
    pub source_dims: Vec<usize>,
    pub source_names: Vec<String>,
    pub grid_start: Epoch,
    pub step_secs: i64,
    pub n_instances: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub dropped_zero_fraction: f64,
    pub seasonal_profile: SeasonalProfile,
    /// Content hash over every other field; models record it and evaluation
    /// refuses mismatches.
    pub hash: String,
}

impl DatasetManifest {
    pub fn compute_hash(&self) -> String {
        let mut unhashed = self.clone();
        unhashed.hash = String::new();
        let blob = serde_json::to_string(&unhashed).expect("manifest serializes");
        format!("{:016x}", fnv1a64(blob.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub split: DatasetSplit,
}

/// Fit the per-slot seasonal factors: the arithmetic mean of raw volume over
/// all training observations sharing the intraday index. Fails on any slot
/// with no observations or a non-positive mean.
pub fn fit_seasonal_profile(
    train_volumes: &[(Epoch, f64)],
    interval_secs: i64,
    fitted_on: &str,
) -> Result<SeasonalProfile, PreprocessError> {
    let slots = (SECONDS_PER_DAY / interval_secs) as usize;
    let mut sums = vec![0.0f64; slots];
    let mut counts = vec![0usize; slots];
    for &(t, v) in train_volumes {
        let slot = (t.rem_euclid(SECONDS_PER_DAY) / interval_secs) as usize;
        sums[slot] += v;
        counts[slot] += 1;
    }
    let mut values = Vec::with_capacity(slots);
    for slot in 0..slots {
        if counts[slot] == 0 {
            return Err(PreprocessError::EmptySeasonalSlot(slot));
        }
        let a = sums[slot] / counts[slot] as f64;
        if !(a > 0.0) {
            return Err(PreprocessError::EmptySeasonalSlot(slot));
        }
        values.push(a);
    }
    Ok(SeasonalProfile { interval_secs, values, fitted_on: fitted_on.to_string() })
}

/// y = v / a at the slot of t.
pub fn deseasonalize(v: f64, t: Epoch, profile: &SeasonalProfile) -> f64 {
    v / profile.factor(t)
}

/// Map deseasonalized predictive moments back to the raw-volume scale:
/// the mean scales by the slot factor, the variance by its square.
pub fn reseasonalize_mean_var(mean_y: f64, var_y: f64, t: Epoch, profile: &SeasonalProfile) -> (f64, f64) {
    let a = profile.factor(t);
    (a * mean_y, a * a * var_y)
}

/// Drop instances whose target volume is zero. The dropped intervals remain
/// inside other instances' feature windows.
pub fn filter_zero_volume(instances: Vec<ModelInstance>) -> (Vec<ModelInstance>, f64) {
    let n = instances.len();
    let kept: Vec<ModelInstance> = instances.into_iter().filter(|inst| inst.v != 0.0).collect();
    let dropped = if n == 0 { 0.0 } else { (n - kept.len()) as f64 / n as f64 };
    (kept, dropped)
}

/// Assemble one instance per grid point `g >= h`. The window for source `s`
/// holds that source's features at grid indices `g-h .. g-1` (column 0 is the
/// oldest lag), so every feature strictly precedes the target interval.
///
/// Instances come out with placeholder `a = 1`, `y = v`; the seasonal factors
/// are applied after the split so the profile only ever sees training data.
pub fn build_windows(
    feature_grids: &[Vec<FeatureVector>],
    volumes: &[f64],
    grid: &Grid,
    h: usize,
) -> Result<Vec<ModelInstance>, PreprocessError> {
    assert!(h >= 1, "window length must be at least 1");
    if volumes.len() != grid.len {
        return Err(PreprocessError::SourceGridMismatch);
    }
    for grid_s in feature_grids {
        if grid_s.len() != grid.len {
            return Err(PreprocessError::SourceGridMismatch);
        }
        for (i, fv) in grid_s.iter().enumerate() {
            if fv.interval_start != grid.interval_start(i) {
                return Err(PreprocessError::SourceGridMismatch);
            }
        }
    }
    if grid.len <= h {
        return Ok(Vec::new());
    }

    let dims: Vec<usize> = feature_grids.iter().map(|g| g[0].values.len()).collect();
    let mut out = Vec::with_capacity(grid.len - h);
    for g in h..grid.len {
        let mut windows = Vec::with_capacity(feature_grids.len());
        for (s, grid_s) in feature_grids.iter().enumerate() {
            let d = dims[s];
            let mut w = Mat::zeros(d, h);
            for lag in 0..h {
                let fv = &grid_s[g - h + lag];
                debug_assert_eq!(fv.values.len(), d);
                for (i, &val) in fv.values.iter().enumerate() {
                    w.set(i, lag, val);
                }
            }
            windows.push(w);
        }
        let v = volumes[g];
        out.push(ModelInstance { t: grid.interval_start(g), v, a: 1.0, y: v, windows });
    }
    Ok(out)
}

/// Contiguous 70/10/20 split in time order: floor(0.7 n) train,
/// floor(0.1 n) validation, remainder test.
pub fn split_dataset(instances: Vec<ModelInstance>) -> Result<DatasetSplit, PreprocessError> {
    let n = instances.len();
    if n < 10 {
        return Err(PreprocessError::TooFewInstances(n));
    }
    let n_train = (0.7 * n as f64).floor() as usize;
    let n_val = (0.1 * n as f64).floor() as usize;
    let mut it = instances.into_iter();
    let train: Vec<_> = it.by_ref().take(n_train).collect();
    let validation: Vec<_> = it.by_ref().take(n_val).collect();
    let test: Vec<_> = it.collect();
    Ok(DatasetSplit { train, validation, test })
}

/// Full pipeline: windows, zero filter, split, profile fit on the training
/// span, deseasonalization, manifest.
pub fn build_dataset(
    feature_grids: &[Vec<FeatureVector>],
    volumes: &[f64],
    grid: &Grid,
    h: usize,
    horizon: Horizon,
) -> Result<Dataset, PreprocessError> {
    let instances = build_windows(feature_grids, volumes, grid, h)?;
    let (kept, dropped_fraction) = filter_zero_volume(instances);
    let mut split = split_dataset(kept)?;

    // Profile over every grid interval up to and including the last training
    // target, zeros included; validation and test never leak in.
    let last_train_t = split.train.last().expect("non-empty train").t;
    let train_span: Vec<(Epoch, f64)> = grid
        .starts()
        .zip(volumes.iter())
        .filter(|&(t, _)| t <= last_train_t)
        .map(|(t, &v)| (t, v))
        .collect();
    let fitted_on = format!("train[{}..{}]", grid.start, last_train_t);
    let profile = fit_seasonal_profile(&train_span, grid.step, &fitted_on)?;

    for inst in split
        .train
        .iter_mut()
        .chain(split.validation.iter_mut())
        .chain(split.test.iter_mut())
    {
        inst.a = profile.factor(inst.t);
        inst.y = inst.v / inst.a;
    }

    let source_names = feature_grids
        .iter()
        .map(|g| g[0].source.to_string())
        .collect::<Vec<_>>();
    let mut manifest = DatasetManifest {
        horizon,
        window_h: h,
        n_sources: feature_grids.len(),
        source_dims: feature_grids.iter().map(|g| g[0].values.len()).collect(),
        source_names,
        grid_start: grid.start,
        step_secs: grid.step,
        n_instances: split.len(),
        n_train: split.train.len(),
        n_validation: split.validation.len(),
        n_test: split.test.len(),
        dropped_zero_fraction: dropped_fraction,
        seasonal_profile: profile,
        hash: String::new(),
    };
    manifest.hash = manifest.compute_hash();
    Ok(Dataset { manifest, split })
}

/// Write `manifest.json` and `dataset.csv` (long form:
/// `t,v,a,y,src,lag,f_index,value`, one row per window entry) into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), PreprocessError> {
    std::fs::create_dir_all(dir)?;
    let manifest_json = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| PreprocessError::Manifest(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), manifest_json)?;

    let file = std::fs::File::create(dir.join("dataset.csv"))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "t,v,a,y,src,lag,f_index,value")?;
    for inst in dataset.split.iter_all() {
        for (s, win) in inst.windows.iter().enumerate() {
            for f_index in 0..win.rows() {
                for lag in 0..win.cols() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        inst.t,
                        inst.v,
                        inst.a,
                        inst.y,
                        s,
                        lag,
                        f_index,
                        win.at(f_index, lag)
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset, PreprocessError> {
    let manifest_json = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&manifest_json).map_err(|e| PreprocessError::Manifest(e.to_string()))?;
    if manifest.hash != manifest.compute_hash() {
        return Err(PreprocessError::Manifest("manifest hash mismatch".into()));
    }

    let file = std::fs::File::open(dir.join("dataset.csv"))?;
    let reader = std::io::BufReader::new(file);
    let h = manifest.window_h;
    let dims = manifest.source_dims.clone();

    let mut instances: Vec<ModelInstance> = Vec::with_capacity(manifest.n_instances);
    let mut current: Option<ModelInstance> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            continue; // header
        }
        let lineno = idx + 1;
        let mut parts = line.split(',');
        let mut next = |_: &str| -> Result<&str, PreprocessError> {
            parts.next().ok_or(PreprocessError::MalformedDataset(lineno))
        };
        let t: Epoch = next("t")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let v: f64 = next("v")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let a: f64 = next("a")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let y: f64 = next("y")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let s: usize = next("src")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let lag: usize = next("lag")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let f_index: usize =
            next("f_index")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;
        let value: f64 =
            next("value")?.parse().map_err(|_| PreprocessError::MalformedDataset(lineno))?;

        let start_new = current.as_ref().map(|c| c.t != t).unwrap_or(true);
        if start_new {
            if let Some(done) = current.take() {
                instances.push(done);
            }
            let windows = dims.iter().map(|&d| Mat::zeros(d, h)).collect();
            current = Some(ModelInstance { t, v, a, y, windows });
        }
        let inst = current.as_mut().expect("current instance");
        if s >= inst.windows.len() || f_index >= dims[s] || lag >= h {
            return Err(PreprocessError::MalformedDataset(lineno));
        }
        inst.windows[s].set(f_index, lag, value);
    }
    if let Some(done) = current.take() {
        instances.push(done);
    }
    if instances.len() != manifest.n_instances {
        return Err(PreprocessError::Manifest(format!(
            "manifest promises {} instances, file has {}",
            manifest.n_instances,
            instances.len()
        )));
    }

    let mut it = instances.into_iter();
    let train: Vec<_> = it.by_ref().take(manifest.n_train).collect();
    let validation: Vec<_> = it.by_ref().take(manifest.n_validation).collect();
    let test: Vec<_> = it.collect();
    Ok(Dataset { manifest, split: DatasetSplit { train, validation, test } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{DataKind, Market, SourceId};

    fn profile_const(a: f64, step: i64) -> SeasonalProfile {
        SeasonalProfile {
            interval_secs: step,
            values: vec![a; (SECONDS_PER_DAY / step) as usize],
            fitted_on: "test".into(),
        }
    }

    #[test]
    fn profile_constant_series() {
        let step = 3600; // hourly slots keep the test small
        let vols: Vec<(Epoch, f64)> = (0..48).map(|i| (i * step, 5.0)).collect();
        let p = fit_seasonal_profile(&vols, step, "t").unwrap();
        assert!(p.values.iter().all(|&a| (a - 5.0).abs() < 1e-12));
    }

    #[test]
    fn profile_slot_mean() {
        let step = 3600;
        let mut vols: Vec<(Epoch, f64)> = (0..48).map(|i| (i * step, 1.0)).collect();
        vols[0].1 = 2.0; // day 1 slot 0
        vols[24].1 = 4.0; // day 2 slot 0
        let p = fit_seasonal_profile(&vols, step, "t").unwrap();
        assert!((p.values[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn profile_missing_slot_errors() {
        let step = 3600;
        let vols: Vec<(Epoch, f64)> = (0..20).map(|i| (i * step, 1.0)).collect();
        match fit_seasonal_profile(&vols, step, "t") {
            Err(PreprocessError::EmptySeasonalSlot(20)) => {}
            other => panic!("expected EmptySeasonalSlot(20), got {other:?}"),
        }
    }

    #[test]
    fn deseasonalize_reseasonalize_round_trip() {
        let p = profile_const(3.0, 60);
        assert_eq!(deseasonalize(3.0, 0, &p), 1.0);
        assert_eq!(deseasonalize(6.0, 60, &p), 2.0);
        assert_eq!(reseasonalize_mean_var(1.0, 0.0, 0, &p), (3.0, 0.0));
        assert_eq!(reseasonalize_mean_var(2.0, 4.0, 0, &p), (6.0, 36.0));
        // Exact identity per slot.
        for t in [0i64, 60, 3600, 86_399] {
            let v = 7.25;
            let y = deseasonalize(v, t, &p);
            let (back, _) = reseasonalize_mean_var(y, 0.0, t, &p);
            assert_eq!(back, v);
        }
    }

    fn dummy_instance(t: Epoch, v: f64) -> ModelInstance {
        ModelInstance { t, v, a: 1.0, y: v, windows: vec![] }
    }

    #[test]
    fn zero_filter_fractions() {
        let (kept, frac) = filter_zero_volume((0..100).map(|i| dummy_instance(i, 1.0)).collect());
        assert_eq!(kept.len(), 100);
        assert_eq!(frac, 0.0);

        let insts: Vec<ModelInstance> =
            (0..100).map(|i| dummy_instance(i, if i % 25 == 0 { 0.0 } else { 1.0 })).collect();
        let (kept, frac) = filter_zero_volume(insts);
        assert_eq!(kept.len(), 96);
        assert!((frac - 0.04).abs() < 1e-12);
    }

    #[test]
    fn split_sizes_and_ordering() {
        let split = split_dataset((0..100).map(|i| dummy_instance(i, 1.0)).collect()).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (70, 10, 20));
        assert!(split.train.last().unwrap().t < split.validation[0].t);
        assert!(split.validation.last().unwrap().t < split.test[0].t);

        let split = split_dataset((0..10).map(|i| dummy_instance(i, 1.0)).collect()).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (7, 1, 2));

        match split_dataset((0..9).map(|i| dummy_instance(i, 1.0)).collect()) {
            Err(PreprocessError::TooFewInstances(9)) => {}
            other => panic!("expected TooFewInstances, got {other:?}"),
        }
    }

    fn toy_grids(grid: &Grid, n_sources: usize, dim: usize) -> Vec<Vec<FeatureVector>> {
        // Sentinel encoding: value = 1000*s + 10*grid_index + f_index, so a
        // brute-force check can recompute any window cell from scratch.
        (0..n_sources)
            .map(|s| {
                (0..grid.len)
                    .map(|g| FeatureVector {
                        source: SourceId { market: Market::Target, kind: DataKind::Transactions },
                        interval_start: grid.interval_start(g),
                        values: (0..dim).map(|f| 1000.0 * s as f64 + 10.0 * g as f64 + f as f64).collect(),
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn build_windows_counts_and_content() {
        let grid = Grid { start: 0, step: 60, len: 4 };
        let grids = toy_grids(&grid, 2, 3);
        let volumes = vec![10.0, 11.0, 12.0, 13.0];

        // Grid of length h+1 yields exactly one instance.
        let insts = build_windows(&grids, &volumes, &grid, 3).unwrap();
        assert_eq!(insts.len(), 1);
        assert_eq!(insts[0].t, 180);
        assert_eq!(insts[0].v, 13.0);

        // Brute-force window assembly: cell (f, lag) of source s for target
        // index g equals the sentinel at grid index g-h+lag.
        let h = 2;
        let insts = build_windows(&grids, &volumes, &grid, h).unwrap();
        assert_eq!(insts.len(), 2);
        for (k, inst) in insts.iter().enumerate() {
            let g = k + h;
            for s in 0..2 {
                for f in 0..3 {
                    for lag in 0..h {
                        let expect = 1000.0 * s as f64 + 10.0 * (g - h + lag) as f64 + f as f64;
                        assert_eq!(inst.windows[s].at(f, lag), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn build_windows_h1_is_previous_interval() {
        let grid = Grid { start: 0, step: 60, len: 3 };
        let grids = toy_grids(&grid, 1, 2);
        let insts = build_windows(&grids, &[1.0, 2.0, 3.0], &grid, 1).unwrap();
        assert_eq!(insts.len(), 2);
        assert_eq!(insts[0].windows[0].at(0, 0), 0.0); // sentinel of grid index 0
        assert_eq!(insts[1].windows[0].at(0, 0), 10.0);
    }

    #[test]
    fn build_windows_no_lookahead_detects_shift() {
        let grid = Grid { start: 0, step: 60, len: 6 };
        let grids = toy_grids(&grid, 1, 2);
        let volumes = vec![1.0; 6];
        let base = build_windows(&grids, &volumes, &grid, 2).unwrap();

        // Shift features one interval forward: every window must change.
        let mut shifted = grids.clone();
        for g in (1..grid.len).rev() {
            let vals = shifted[0][g - 1].values.clone();
            shifted[0][g].values = vals;
        }
        let moved = build_windows(&shifted, &volumes, &grid, 2).unwrap();
        for (a, b) in base.iter().zip(moved.iter()) {
            assert_ne!(a.windows[0], b.windows[0]);
        }
    }

    #[test]
    fn build_windows_rejects_misaligned_grid() {
        let grid = Grid { start: 0, step: 60, len: 3 };
        let mut grids = toy_grids(&grid, 1, 2);
        grids[0][1].interval_start += 1;
        match build_windows(&grids, &[1.0; 3], &grid, 1) {
            Err(PreprocessError::SourceGridMismatch) => {}
            other => panic!("expected SourceGridMismatch, got {other:?}"),
        }
    }

    #[test]
    fn dataset_round_trip_via_files() {
        let days = 2usize;
        let step = 3600i64;
        let len = days * 24;
        let grid = Grid { start: 0, step, len };
        let grids = toy_grids(&grid, 2, 2);
        let volumes: Vec<f64> = (0..len).map(|i| 1.0 + (i % 24) as f64).collect();
        // Hourly "horizon" is not one of the CLI choices but exercises the
        // format with a small slot count; manifest stores the step anyway.
        let ds = build_dataset(&grids, &volumes, &grid, 2, Horizon::M1);
        // step mismatch with 1m horizon is fine for the format test
        let ds = ds.unwrap();
        assert!(ds.manifest.n_instances >= 10);
        for inst in ds.split.iter_all() {
            assert_eq!(inst.y, inst.v / inst.a);
        }

        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }
}
