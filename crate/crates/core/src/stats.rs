//! Time-series statistics and the running-average divergence experiment.

use rayon::prelude::*;

use crate::calibrate::CalibrationRecord;
use crate::dynamics::{ModelParams, RingModel, TwoScaleModel};
use crate::error::{Error, Result};
use crate::integrate::{advance, member_rng, normal_vec, step_count, Rk2, VectorField};
use crate::lagged;

pub use crate::calibrate::{PooledMoments, RangeMoments};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
    pub pooled: bool,
}

/// Mean and population variance of a scalar series.
pub fn moments(series: &[f64]) -> Result<MomentSummary> {
    moments_pooled(&[series]).map(|m| MomentSummary {
        pooled: false,
        ..m
    })
}

/// Mean and population variance pooled over channels and time.
pub fn moments_pooled(channels: &[&[f64]]) -> Result<MomentSummary> {
    let count: usize = channels.iter().map(|c| c.len()).sum();
    if count < 2 {
        return Err(Error::InvalidInput(format!(
            "moments need at least 2 samples, got {count}"
        )));
    }
    let mean = channels.iter().flat_map(|c| c.iter()).sum::<f64>() / count as f64;
    let variance = channels
        .iter()
        .flat_map(|c| c.iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / count as f64;
    Ok(MomentSummary {
        mean,
        variance,
        count,
        pooled: channels.len() > 1,
    })
}

/// Uniform-bin probability density.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn integral(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.density)
            .map(|(w, d)| (w[1] - w[0]) * d)
            .sum()
    }
}

/// Normalized histogram over `range`; samples outside the range are dropped and
/// the right edge is inclusive.
pub fn pdf<'a, I>(series: I, n_bins: usize, range: (f64, f64)) -> Result<Histogram>
where
    I: IntoIterator<Item = &'a f64>,
{
    let (lo, hi) = range;
    if n_bins < 2 || !lo.is_finite() || !hi.is_finite() || !(hi > lo) {
        return Err(Error::InvalidInput(format!(
            "pdf needs n_bins >= 2 and a finite range, got {n_bins} bins over [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    let mut inside = 0u64;
    for &v in series {
        if v >= lo && v <= hi {
            let b = (((v - lo) / width) as usize).min(n_bins - 1);
            counts[b] += 1;
            inside += 1;
        }
    }
    if inside == 0 {
        return Err(Error::EmptyHistogram);
    }
    let edges: Vec<f64> = (0..=n_bins).map(|k| lo + k as f64 * width).collect();
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (inside as f64 * (w[1] - w[0])))
        .collect();
    Ok(Histogram { edges, density })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcfCurve {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
}

impl AcfCurve {
    /// Trapezoidal integral of the curve over its whole lag range.
    pub fn integrated(&self) -> f64 {
        self.lags
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(l, v)| 0.5 * (l[1] - l[0]) * (v[0] + v[1]))
            .sum()
    }
}

/// Normalized autocorrelation with the mean removed and `1/N` normalization.
pub fn acf(series: &[f64], max_lag: f64, dt_sample: f64) -> Result<AcfCurve> {
    acf_pooled(&[series], max_lag, dt_sample)
}

/// Autocorrelation pooled over channels (each channel centered separately).
pub fn acf_pooled(channels: &[&[f64]], max_lag: f64, dt_sample: f64) -> Result<AcfCurve> {
    if !(dt_sample > 0.0) || !(max_lag >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "acf needs dt_sample > 0 and max_lag >= 0, got {dt_sample}, {max_lag}"
        )));
    }
    let n = channels.iter().map(|c| c.len()).min().unwrap_or(0);
    let n_lag = step_count(max_lag, dt_sample) as usize;
    if n < 2 || n_lag >= n {
        return Err(Error::InvalidInput(format!(
            "series of {n} samples is too short for {n_lag} lags"
        )));
    }
    let mut acc = vec![0.0; n_lag + 1];
    for ch in channels {
        let mut c = vec![ch.to_vec()];
        lagged::center(&mut c);
        for (a, v) in acc.iter_mut().zip(lagged::autocovariance(&c[0], n_lag)) {
            *a += v;
        }
    }
    let var = acc[0];
    if !(var > 0.0) || var < 1e-300 {
        return Err(Error::DegenerateSeries);
    }
    Ok(AcfCurve {
        lags: (0..=n_lag).map(|k| k as f64 * dt_sample).collect(),
        values: acc.iter().map(|v| v / var).collect(),
    })
}

/// Number of sample intervals spanned by a window of the given duration.
pub fn window_samples(window: f64, dt_sample: f64) -> usize {
    (window / dt_sample).round() as usize
}

/// Trailing running mean over `[t - window, t]` (inclusive samples). Before the
/// first full window, the mean runs over the samples available so far.
pub fn running_average(series: &[f64], window: f64, dt_sample: f64) -> Vec<f64> {
    let m = window_samples(window, dt_sample);
    if m == 0 {
        return series.to_vec();
    }
    (0..series.len())
        .map(|k| {
            let lo = k.saturating_sub(m);
            let w = &series[lo..=k];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

impl From<&PooledMoments> for MomentSummary {
    fn from(m: &PooledMoments) -> Self {
        Self {
            mean: m.mean(),
            variance: m.variance(),
            count: m.count as usize,
            pooled: true,
        }
    }
}

/// Pooled moments of the slow and fast variables of one coupled run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoScaleMoments {
    pub x: MomentSummary,
    pub y: MomentSummary,
}

/// Streams the two-scale model from a seeded standard-normal state for
/// `t_spinup`, then pools moments of `x` and `y` over every step of `t_window`.
pub fn two_scale_moments(
    p: &ModelParams,
    dt: f64,
    t_spinup: f64,
    t_window: f64,
    seed: u64,
) -> Result<TwoScaleMoments> {
    let model = TwoScaleModel::new(p)?;
    let mut s = normal_vec(&mut member_rng(seed, 0), p.dim());
    advance(&model, &mut s, t_spinup, dt, &mut [])?;
    let mut xs = RangeMoments::new(0..p.n_x);
    let mut ys = RangeMoments::new(p.n_x..p.dim());
    advance(&model, &mut s, t_window, dt, &mut [&mut xs, &mut ys])?;
    Ok(TwoScaleMoments {
        x: (&xs.moments).into(),
        y: (&ys.moments).into(),
    })
}

/// Ensemble divergence protocol over one long trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceProtocol {
    pub t_spinup: f64,
    pub n_members: usize,
    pub t_spacing: f64,
    pub t_horizon: f64,
    /// Euclidean norm of the full-state perturbation.
    pub delta: f64,
    /// Running-average window.
    pub window: f64,
    /// Spacing of the recorded profile.
    pub sample_dt: f64,
    pub seed: u64,
}

impl DivergenceProtocol {
    /// Desk-scale defaults: 100 members spaced 20 apart, spin-up 200, horizon 25,
    /// half-unit running averages.
    pub fn desk(delta: f64, seed: u64) -> Self {
        Self {
            t_spinup: 200.0,
            n_members: 100,
            t_spacing: 20.0,
            t_horizon: 25.0,
            delta,
            window: 0.5,
            sample_dt: 0.01,
            seed,
        }
    }

    /// Full-length protocol: 500 members, spin-up 1000.
    pub fn paper(delta: f64, seed: u64) -> Self {
        Self {
            t_spinup: 1000.0,
            n_members: 500,
            ..Self::desk(delta, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("t_spacing", self.t_spacing),
            ("t_horizon", self.t_horizon),
            ("window", self.window),
            ("sample_dt", self.sample_dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_members == 0 || !(self.t_spinup >= 0.0) || !(self.delta >= 0.0) {
            return Err(Error::InvalidInput(
                "divergence protocol needs n_members > 0, t_spinup >= 0, delta >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceProfile {
    pub times: Vec<f64>,
    pub divergence: Vec<f64>,
    pub n_members: usize,
    pub n_excluded: usize,
    pub delta: f64,
    pub window: f64,
    /// Which components the initial perturbation touched.
    pub perturbed: &'static str,
    /// Divergence of every kept member, in member order.
    pub members: Vec<Vec<f64>>,
}

/// Mean of a per-member statistic with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
        }
    }

    /// `|mean|` within `z` standard errors of zero.
    pub fn consistent_with_zero(&self, z: f64) -> bool {
        self.mean.abs() <= z * self.std_error
    }
}

fn ols_slope(t: &[f64], v: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let vm = v.iter().sum::<f64>() / n;
    let num: f64 = t.iter().zip(v).map(|(a, b)| (a - tm) * (b - vm)).sum();
    let den: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    num / den
}

impl DivergenceProfile {
    /// Profile value at the grid point nearest to `t`.
    pub fn at(&self, t: f64) -> f64 {
        let dt = self.times[1] - self.times[0];
        let k = ((t - self.times[0]) / dt).round() as usize;
        self.divergence[k.min(self.divergence.len() - 1)]
    }

    /// Indices of grid points inside `[a, b]`.
    pub fn span(&self, a: f64, b: f64) -> impl Iterator<Item = usize> + '_ {
        let tol = 1e-9 * (b - a).abs().max(1.0);
        self.times
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t >= a - tol && t <= b + tol)
            .map(|(k, _)| k)
    }

    /// Least-squares slope over `[a, b]`, fitted per member and averaged.
    pub fn slope(&self, a: f64, b: f64) -> Estimate {
        let idx: Vec<usize> = self.span(a, b).collect();
        let t: Vec<f64> = idx.iter().map(|&k| self.times[k]).collect();
        let slopes: Vec<f64> = self
            .members
            .iter()
            .map(|m| ols_slope(&t, &idx.iter().map(|&k| m[k]).collect::<Vec<_>>()))
            .collect();
        Estimate::from_samples(&slopes)
    }

    /// Ensemble mean at the grid point nearest `t`, with its standard error.
    pub fn estimate_at(&self, t: f64) -> Estimate {
        let dt = self.times[1] - self.times[0];
        let k = (((t - self.times[0]) / dt).round() as usize).min(self.times.len() - 1);
        Estimate::from_samples(&self.members.iter().map(|m| m[k]).collect::<Vec<_>>())
    }
}

/// Largest allowed fraction of blown-up members.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.05;

/// Runs the perturbed/unperturbed running-average divergence experiment for
/// `field`, of which the first `n_slow` components are the slow variables.
pub fn divergence_experiment<F: VectorField + Sync>(
    field: &F,
    n_slow: usize,
    dt: f64,
    protocol: &DivergenceProtocol,
) -> Result<DivergenceProfile> {
    protocol.validate()?;
    let dim = field.dim();
    let stride = step_count(protocol.sample_dt, dt).max(1);
    let sample_dt = stride as f64 * dt;
    let n_samples = step_count(protocol.t_horizon, sample_dt) as usize;

    // Generic initial condition, then snapshots along one long trajectory.
    let mut s = normal_vec(&mut member_rng(protocol.seed, u64::MAX), dim);
    if protocol.t_spinup > 0.0 {
        advance(field, &mut s, protocol.t_spinup, dt, &mut [])?;
    }
    let mut snapshots = Vec::with_capacity(protocol.n_members);
    for m in 0..protocol.n_members {
        if m > 0 {
            advance(field, &mut s, protocol.t_spacing, dt, &mut [])?;
        }
        snapshots.push(s.clone());
    }

    let profiles: Vec<Option<Vec<f64>>> = snapshots
        .par_iter()
        .enumerate()
        .map(|(m, base)| {
            member_profile(
                field,
                n_slow,
                base,
                dt,
                stride,
                n_samples,
                sample_dt,
                protocol,
                m as u64,
            )
        })
        .collect();

    let excluded = profiles.iter().filter(|p| p.is_none()).count();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * protocol.n_members as f64 {
        return Err(Error::TooManyExclusions {
            excluded,
            total: protocol.n_members,
        });
    }
    let kept = protocol.n_members - excluded;
    let members: Vec<Vec<f64>> = profiles.into_iter().flatten().collect();
    let mut mean = vec![0.0; n_samples + 1];
    for p in &members {
        for (a, v) in mean.iter_mut().zip(p) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= kept as f64);
    Ok(DivergenceProfile {
        times: (0..=n_samples).map(|k| k as f64 * sample_dt).collect(),
        divergence: mean,
        n_members: kept,
        n_excluded: excluded,
        delta: protocol.delta,
        window: protocol.window,
        perturbed: "full-state",
        members,
    })
}

#[allow(clippy::too_many_arguments)]
fn member_profile<F: VectorField>(
    field: &F,
    n_slow: usize,
    base: &[f64],
    dt: f64,
    stride: u64,
    n_samples: usize,
    sample_dt: f64,
    protocol: &DivergenceProtocol,
    member: u64,
) -> Option<Vec<f64>> {
    let mut rng = member_rng(protocol.seed, member);
    let mut dir = normal_vec(&mut rng, base.len());
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v *= protocol.delta / norm);

    let mut a = base.to_vec();
    let mut b: Vec<f64> = base.iter().zip(&dir).map(|(s, d)| s + d).collect();
    let (mut rk_a, mut rk_b) = (Rk2::new(a.len()), Rk2::new(a.len()));

    // diff[c][k] = x'_c(t_k) - x_c(t_k)
    let mut diff = vec![Vec::with_capacity(n_samples + 1); n_slow];
    let record = |diff: &mut Vec<Vec<f64>>, a: &[f64], b: &[f64]| {
        for c in 0..n_slow {
            diff[c].push(b[c] - a[c]);
        }
    };
    record(&mut diff, &a, &b);
    for _ in 0..n_samples {
        for _ in 0..stride {
            if !(rk_a.step(field, &mut a, dt) & rk_b.step(field, &mut b, dt)) {
                return None;
            }
        }
        record(&mut diff, &a, &b);
    }
    let averaged: Vec<Vec<f64>> = diff
        .iter()
        .map(|d| running_average(d, protocol.window, sample_dt))
        .collect();
    Some(
        (0..=n_samples)
            .map(|k| averaged.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt())
            .collect(),
    )
}

/// Divergence experiment for the two-scale model with perturbations on the full state.
pub fn divergence_two_scale(
    p: &ModelParams,
    dt: f64,
    protocol: &DivergenceProtocol,
) -> Result<DivergenceProfile> {
    let model = TwoScaleModel::new(p)?;
    divergence_experiment(&model, p.n_x, dt, protocol)
}

/// Divergence experiment for the uncoupled rescaled L96 model.
pub fn divergence_uncoupled(
    n: usize,
    calib: &CalibrationRecord,
    dt: f64,
    protocol: &DivergenceProtocol,
) -> Result<DivergenceProfile> {
    let model = RingModel::rescaled(n, calib)?;
    divergence_experiment(&model, n, dt, protocol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::FnField;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn moments_of_constant_and_alternating_series() {
        let m = moments(&[2.5; 10]).unwrap();
        assert_eq!((m.mean, m.variance, m.count), (2.5, 0.0, 10));
        let alt: Vec<f64> = (0..1000).map(|k| if k % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let m = moments(&alt).unwrap();
        assert_eq!((m.mean, m.variance), (0.0, 1.0));
        assert!(moments(&[]).is_err());
        assert!(moments(&[1.0]).is_err());
    }

    #[test]
    fn point_mass_histogram() {
        let h = pdf(&[0.3; 50], 10, (0.0, 1.0)).unwrap();
        let nonzero: Vec<_> = h.density.iter().filter(|&&d| d > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_relative_eq!(*nonzero[0], 1.0 / h.bin_width(), max_relative = 1e-12);
        assert!(matches!(pdf(&[5.0; 3], 10, (0.0, 1.0)), Err(Error::EmptyHistogram)));
        assert!(pdf(&[0.5], 1, (0.0, 1.0)).is_err());
    }

    #[test]
    fn gaussian_histogram_matches_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let draws: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = pdf(&draws, 40, (-4.0, 4.0)).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-12);
        // Compare against the bin-averaged density so the bin width does not bias the check.
        let cdf = |x: f64| 0.5 * (1.0 + erf(x / 2f64.sqrt()));
        let mass_inside = cdf(4.0) - cdf(-4.0);
        for (w, d) in h.edges.windows(2).zip(&h.density) {
            let exact = (cdf(w[1]) - cdf(w[0])) / (w[1] - w[0]) / mass_inside;
            assert!((d - exact).abs() < 0.02, "{w:?}: {d} vs {exact}");
        }
    }

    // Abramowitz-Stegun 7.1.26 is not accurate enough here; use a series/continued fraction.
    fn erf(x: f64) -> f64 {
        let t = x.abs();
        let v = if t < 3.0 {
            let mut term = t;
            let mut sum = t;
            for n in 1..200 {
                term *= -t * t / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            sum * 2.0 / std::f64::consts::PI.sqrt()
        } else {
            // asymptotic complement
            let mut s = 1.0;
            let mut term = 1.0;
            for n in 1..6 {
                term *= -((2 * n - 1) as f64) / (2.0 * t * t);
                s += term;
            }
            1.0 - (-t * t).exp() / (t * std::f64::consts::PI.sqrt()) * s
        };
        v.copysign(x)
    }

    #[test]
    fn white_noise_acf_stays_in_sampling_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let s: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c = acf(&s, 10.0, 1.0).unwrap();
        assert_eq!(c.values[0], 1.0);
        let bound = 3.0 / (n as f64).sqrt();
        assert!(c.values[1..].iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn acf_rejects_constant_series() {
        assert!(matches!(
            acf(&[1.0; 100], 5.0, 1.0),
            Err(Error::DegenerateSeries)
        ));
    }

    #[test]
    fn running_average_cases() {
        let s: Vec<f64> = (0..20).map(|k| k as f64 * 0.3).collect();
        assert_eq!(running_average(&s, 0.0, 0.1), s);
        let c = running_average(&[1.7; 30], 0.5, 0.1);
        assert!(c.iter().all(|v| (v - 1.7).abs() < 1e-15));
        // ramp a t sampled at dt: trailing mean is a (t - w/2) once the window is full
        let (a, dt, w) = (2.0, 0.1, 0.5);
        let ramp: Vec<f64> = (0..50).map(|k| a * k as f64 * dt).collect();
        let ra = running_average(&ramp, w, dt);
        for (k, v) in ra.iter().enumerate().skip(5) {
            assert_relative_eq!(*v, a * (k as f64 * dt - w / 2.0), max_relative = 1e-12);
        }
        // partial leading window
        assert_relative_eq!(ra[2], a * dt, max_relative = 1e-12);
    }

    #[test]
    fn zero_perturbation_gives_zero_profile() {
        let model = RingModel::lorenz96(6, 8.0).unwrap();
        let proto = DivergenceProtocol {
            t_spinup: 1.0,
            n_members: 4,
            t_spacing: 0.5,
            t_horizon: 1.0,
            delta: 0.0,
            window: 0.1,
            sample_dt: 0.01,
            seed: 1,
        };
        let prof = divergence_experiment(&model, 6, 1e-3, &proto).unwrap();
        assert_eq!(prof.times.len(), 101);
        assert!(prof.divergence.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_divergence_is_bounded_by_delta() {
        let model = RingModel::lorenz96(8, 8.0).unwrap();
        let proto = DivergenceProtocol {
            t_spinup: 5.0,
            n_members: 6,
            t_spacing: 1.0,
            t_horizon: 2.0,
            delta: 1e-3,
            window: 0.2,
            sample_dt: 0.01,
            seed: 3,
        };
        let prof = divergence_experiment(&model, 4, 1e-3, &proto).unwrap();
        assert!(prof.divergence[0] <= 1e-3 * (1.0 + 1e-12));
        assert!(prof.divergence.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn too_many_blowups_is_an_error() {
        // dx/dt = 1 + x^2 escapes to infinity in finite time from any start.
        let field = FnField {
            dim: 2,
            f: |s: &[f64], o: &mut [f64]| {
                o[0] = 1.0 + s[0] * s[0];
                o[1] = 0.0;
            },
        };
        let proto = DivergenceProtocol {
            t_spinup: 0.0,
            n_members: 3,
            t_spacing: 1e-3,
            t_horizon: 5.0,
            delta: 0.1,
            window: 0.1,
            sample_dt: 0.1,
            seed: 0,
        };
        let res = divergence_experiment(&field, 1, 1e-3, &proto);
        assert!(
            matches!(res, Err(Error::TooManyExclusions { excluded: 3, total: 3 })),
            "{res:?}"
        );
    }
}
