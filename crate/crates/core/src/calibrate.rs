//! Long-run mean and standard deviation of the uncoupled L96 model, which fix the
//! rescaling `x = mean + beta q`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dynamics::RingModel;
use crate::error::{Error, Result};
use crate::integrate::{advance, member_rng, Observer};

/// Records whose pooled standard deviation falls below this are flagged as
/// sitting on a fixed point.
pub const FIXED_POINT_BETA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub f: f64,
    pub n: usize,
    pub mean: f64,
    pub beta: f64,
    pub dt: f64,
    pub t_total: f64,
    pub t_spinup: f64,
    pub seed: u64,
    pub fixed_point: bool,
}

impl CalibrationRecord {
    /// Record with the given moments and no integration provenance.
    pub fn from_moments(f: f64, n: usize, mean: f64, beta: f64) -> Self {
        Self {
            f,
            n,
            mean,
            beta,
            dt: 0.0,
            t_total: 0.0,
            t_spinup: 0.0,
            seed: 0,
            fixed_point: beta < FIXED_POINT_BETA,
        }
    }

    pub fn key(&self) -> CalibrationKey {
        CalibrationKey {
            f: self.f,
            n: self.n,
            dt: self.dt,
            t_total: self.t_total,
            seed: self.seed,
        }
    }
}

/// Run-length and seed of a calibration integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub dt: f64,
    pub t_total: f64,
    pub t_spinup: f64,
    pub seed: u64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_total: 5000.0,
            t_spinup: 100.0,
            seed: 0,
        }
    }
}

/// Pooled first and second moments over every coordinate and every step.
#[derive(Debug, Default, Clone)]
pub struct PooledMoments {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: u64,
}

impl PooledMoments {
    pub fn push_all(&mut self, values: &[f64]) {
        let (mut s, mut q) = (0.0, 0.0);
        for &v in values {
            s += v;
            q += v * v;
        }
        self.sum += s;
        self.sum_sq += q;
        self.count += values.len() as u64;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Population (`1/N`) variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.count as f64 - m * m).max(0.0)
    }
}

/// Pools moments over a contiguous index range of the state.
pub struct RangeMoments {
    pub range: std::ops::Range<usize>,
    pub moments: PooledMoments,
}

impl RangeMoments {
    pub fn new(range: std::ops::Range<usize>) -> Self {
        Self {
            range,
            moments: PooledMoments::default(),
        }
    }
}

impl Observer for RangeMoments {
    fn observe(&mut self, _step: u64, _t: f64, state: &[f64]) {
        self.moments.push_all(&state[self.range.clone()]);
    }
}

/// Integrates the uncoupled model at forcing `f` from `f 1 + U(-1e-3, 1e-3)`,
/// discards the spin-up, and pools mean and standard deviation.
pub fn calibrate(
    f: f64,
    n: usize,
    dt: f64,
    t_total: f64,
    t_spinup: f64,
    seed: u64,
) -> Result<CalibrationRecord> {
    if !(t_total > 0.0) || !(t_spinup >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "calibration needs dt > 0, t_total > 0, t_spinup >= 0 (got {dt}, {t_total}, {t_spinup})"
        )));
    }
    let model = RingModel::lorenz96(n, f)?;
    let mut rng = member_rng(seed, 0);
    let mut s: Vec<f64> = (0..n).map(|_| f + rng.random_range(-1e-3..1e-3)).collect();
    if t_spinup > 0.0 {
        advance(&model, &mut s, t_spinup, dt, &mut [])?;
    }
    let mut acc = RangeMoments::new(0..n);
    advance(&model, &mut s, t_total, dt, &mut [&mut acc])?;
    let beta = acc.moments.variance().sqrt();
    Ok(CalibrationRecord {
        f,
        n,
        mean: acc.moments.mean(),
        beta,
        dt,
        t_total,
        t_spinup,
        seed,
        fixed_point: beta < FIXED_POINT_BETA,
    })
}

pub fn calibrate_with(f: f64, n: usize, s: &CalibrationSettings) -> Result<CalibrationRecord> {
    calibrate(f, n, s.dt, s.t_total, s.t_spinup, s.seed)
}

/// Identity of a cached calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationKey {
    pub f: f64,
    pub n: usize,
    pub dt: f64,
    pub t_total: f64,
    pub seed: u64,
}

impl CalibrationKey {
    pub fn new(f: f64, n: usize, s: &CalibrationSettings) -> Self {
        Self {
            f,
            n,
            dt: s.dt,
            t_total: s.t_total,
            seed: s.seed,
        }
    }
}

/// Plain-text cache: one record per line,
/// `f n dt t_total t_spinup seed mean beta flags`.
#[derive(Debug, Clone)]
pub struct CalibrationCache {
    path: PathBuf,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_record(r: &CalibrationRecord) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        fmt17(r.f),
        r.n,
        fmt17(r.dt),
        fmt17(r.t_total),
        fmt17(r.t_spinup),
        r.seed,
        fmt17(r.mean),
        fmt17(r.beta),
        if r.fixed_point { "fixed_point" } else { "-" }
    )
}

fn parse_record(line: &str, lineno: usize) -> Result<CalibrationRecord> {
    let bad = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 9 {
        return Err(bad(format!("expected 9 fields, found {}", fields.len())));
    }
    let float = |i: usize, name: &str| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .map_err(|e| bad(format!("field `{name}`: {e}")))
    };
    let fixed_point = match fields[8] {
        "-" => false,
        "fixed_point" => true,
        other => return Err(bad(format!("unknown flag `{other}`"))),
    };
    Ok(CalibrationRecord {
        f: float(0, "f")?,
        n: fields[1]
            .parse()
            .map_err(|e| bad(format!("field `n`: {e}")))?,
        dt: float(2, "dt")?,
        t_total: float(3, "t_total")?,
        t_spinup: float(4, "t_spinup")?,
        seed: fields[5]
            .parse()
            .map_err(|e| bad(format!("field `seed`: {e}")))?,
        mean: float(6, "mean")?,
        beta: float(7, "beta")?,
        fixed_point,
    })
}

impl CalibrationCache {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All records in file order. A missing file is an empty cache.
    pub fn records(&self) -> Result<Vec<CalibrationRecord>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| parse_record(l, i + 1))
            .collect()
    }

    pub fn load(&self, key: &CalibrationKey) -> Result<Option<CalibrationRecord>> {
        Ok(self.records()?.into_iter().find(|r| r.key() == *key))
    }

    /// Inserts or replaces the record with the same key.
    pub fn store(&self, record: &CalibrationRecord) -> Result<()> {
        let mut records = self.records()?;
        records.retain(|r| r.key() != record.key());
        records.push(record.clone());
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut out = fs::File::create(&self.path)?;
        for r in &records {
            writeln!(out, "{}", format_record(r))?;
        }
        Ok(())
    }

    /// Explicit load-or-compute; the computed record is stored.
    pub fn get_or_compute(
        &self,
        f: f64,
        n: usize,
        settings: &CalibrationSettings,
    ) -> Result<CalibrationRecord> {
        if let Some(r) = self.load(&CalibrationKey::new(f, n, settings))? {
            return Ok(r);
        }
        let r = calibrate_with(f, n, settings)?;
        self.store(&r)?;
        Ok(r)
    }
}

/// Calibration source used by experiment setup: fixed settings, an optional
/// on-disk cache, and an in-memory memo.
#[derive(Debug)]
pub struct Calibrator {
    pub settings: CalibrationSettings,
    cache: Option<CalibrationCache>,
    memo: std::sync::Mutex<Vec<CalibrationRecord>>,
}

impl Calibrator {
    pub fn new(settings: CalibrationSettings, cache: Option<CalibrationCache>) -> Self {
        Self {
            settings,
            cache,
            memo: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn get(&self, f: f64, n: usize) -> Result<CalibrationRecord> {
        let key = CalibrationKey::new(f, n, &self.settings);
        if let Some(r) = self.memo.lock().unwrap().iter().find(|r| r.key() == key) {
            return Ok(r.clone());
        }
        let r = match &self.cache {
            Some(c) => c.get_or_compute(f, n, &self.settings)?,
            None => calibrate_with(f, n, &self.settings)?,
        };
        self.memo.lock().unwrap().push(r.clone());
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_forcing_settles_on_the_fixed_point() {
        let r = calibrate(0.5, 8, 1e-2, 200.0, 50.0, 1).unwrap();
        assert!(r.fixed_point);
        assert!((r.mean - 0.5).abs() < 1e-9, "{}", r.mean);
        assert!(r.beta < FIXED_POINT_BETA);
    }

    #[test]
    fn rejects_bad_run_lengths() {
        assert!(calibrate(6.0, 10, 1e-3, 0.0, 1.0, 0).is_err());
        assert!(calibrate(6.0, 10, -1e-3, 10.0, 1.0, 0).is_err());
    }

    fn sample(seed: u64) -> CalibrationRecord {
        CalibrationRecord {
            f: 6.0,
            n: 10,
            mean: 1.234_567_890_123_456_7,
            beta: 3.219_876_543_210_123,
            dt: 1e-3,
            t_total: 5000.0,
            t_spinup: 100.0,
            seed,
            fixed_point: false,
        }
    }

    #[test]
    fn cache_round_trip_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CalibrationCache::new(dir.path().join("calib.txt"));
        assert_eq!(cache.load(&sample(1).key()).unwrap(), None);

        cache.store(&sample(1)).unwrap();
        assert_eq!(cache.load(&sample(1).key()).unwrap(), Some(sample(1)));

        let mut updated = sample(1);
        updated.mean = -0.5;
        cache.store(&updated).unwrap();
        cache.store(&sample(2)).unwrap();
        let all = cache.records().unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(cache.load(&sample(1).key()).unwrap(), Some(updated));
    }

    #[test]
    fn malformed_cache_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.txt");
        let good = format_record(&sample(1));
        fs::write(&path, format!("{good}\n6.0 10 oops\n")).unwrap();
        let err = CalibrationCache::new(&path).records().unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn record_line_uses_seventeen_digits() {
        let line = format_record(&sample(3));
        assert!(line.contains("1.2345678901234567e0"), "{line}");
        assert_eq!(line.split(' ').count(), 9);
    }
}
