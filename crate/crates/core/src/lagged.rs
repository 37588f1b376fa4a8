//! FFT-backed lagged covariance estimation.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Removes the mean of each channel in place and returns the means.
pub fn center(channels: &mut [Vec<f64>]) -> Vec<f64> {
    channels
        .iter_mut()
        .map(|c| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            c.iter_mut().for_each(|v| *v -= m);
            m
        })
        .collect()
}

fn spectra(channels: &[Vec<f64>], padded: usize, planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex64>> {
    let fft = planner.plan_fft_forward(padded);
    channels
        .iter()
        .map(|c| {
            let mut buf = vec![Complex64::new(0.0, 0.0); padded];
            for (b, &v) in buf.iter_mut().zip(c) {
                b.re = v;
            }
            fft.process(&mut buf);
            buf
        })
        .collect()
}

fn padded_len(n: usize, max_lag: usize) -> usize {
    (n + max_lag + 1).next_power_of_two()
}

/// Biased lagged cross-covariances of centered channels:
/// `R_k[a][b] = (1/N) sum_t z_a(t + k) z_b(t)` for `k = 0..=max_lag`.
pub fn cross_covariances(channels: &[Vec<f64>], max_lag: usize) -> Vec<DMatrix<f64>> {
    let d = channels.len();
    let n = channels[0].len();
    assert!(channels.iter().all(|c| c.len() == n));
    let max_lag = max_lag.min(n - 1);
    let padded = padded_len(n, max_lag);
    let mut planner = FftPlanner::new();
    let spec = spectra(channels, padded, &mut planner);
    let ifft = planner.plan_fft_inverse(padded);
    let mut out = vec![DMatrix::zeros(d, d); max_lag + 1];
    let scale = 1.0 / (padded as f64 * n as f64);
    let mut buf = vec![Complex64::new(0.0, 0.0); padded];
    for a in 0..d {
        for b in a..d {
            for ((o, xa), xb) in buf.iter_mut().zip(&spec[a]).zip(&spec[b]) {
                *o = xa * xb.conj();
            }
            ifft.process(&mut buf);
            // buf[k] = sum_t z_a(t + k) z_b(t); buf[L - k] = sum_t z_b(t + k) z_a(t)
            for (k, m) in out.iter_mut().enumerate() {
                m[(a, b)] = buf[k].re * scale;
                let neg = if k == 0 { 0 } else { padded - k };
                m[(b, a)] = buf[neg].re * scale;
            }
        }
    }
    out
}

/// Biased autocovariances of one centered channel for `k = 0..=max_lag`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let max_lag = max_lag.min(n - 1);
    if (n as u128) * (max_lag as u128 + 1) < 1 << 22 {
        return (0..=max_lag)
            .map(|k| {
                series[k..]
                    .iter()
                    .zip(series)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
    }
    let padded = padded_len(n, max_lag);
    let mut planner = FftPlanner::new();
    let mut spec = spectra(std::slice::from_ref(&series.to_vec()), padded, &mut planner).remove(0);
    for v in spec.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(padded).process(&mut spec);
    let scale = 1.0 / (padded as f64 * n as f64);
    spec[..=max_lag].iter().map(|v| v.re * scale).collect()
}
