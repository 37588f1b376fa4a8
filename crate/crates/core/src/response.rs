//! Linear response of the fast limiting dynamics and the slow damping term it
//! induces through the energy-preserving coupling.
//!
//! Two estimators of the lagged response `C(s)` are provided:
//!
//! * quasi-Gaussian: lagged covariance times the inverse lag-0 covariance of one
//!   long trajectory;
//! * tangent-exact: the average of tangent maps started along one long trajectory.
//!
//! Either curve integrates to the infinite-time operator `𝓒`, from which
//! `H = -(λ_x λ_y / J) L 𝓒 Lᵀ` follows for the Lorenz block-sum coupling.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{FastLimitingModel, Forced, ModelParams, OUParams, OuDrift, RingModel};
use crate::error::{check_len, Error, Result};
use crate::integrate::{
    advance, member_rng, normal_vec, step_count, EulerMaruyama, IntegratorConfig, Linearized,
    Rk2, TangentMap, TangentStepper, Trajectory, VectorField,
};
use crate::lagged;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    QuasiGaussian,
    TangentExact,
    Analytic,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::QuasiGaussian => "quasi-gaussian",
            Estimator::TangentExact => "tangent-exact",
            Estimator::Analytic => "analytic",
        })
    }
}

/// Lagged response matrices on a uniform lag grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCurve {
    pub lags: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    pub base_point: Vec<f64>,
    pub estimator: Estimator,
}

impl ResponseCurve {
    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn lag_step(&self) -> f64 {
        self.lags[1] - self.lags[0]
    }

    pub fn extent(&self) -> f64 {
        *self.lags.last().unwrap()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.matrices.iter().map(|m| m.norm()).collect()
    }

    /// Keeps every `k`-th lag.
    pub fn thinned(&self, k: usize) -> Self {
        let k = k.max(1);
        Self {
            lags: self.lags.iter().step_by(k).copied().collect(),
            matrices: self.matrices.iter().step_by(k).cloned().collect(),
            base_point: self.base_point.clone(),
            estimator: self.estimator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
    ClosedForm,
}

/// Time integral of a response curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOperator {
    pub matrix: DMatrix<f64>,
    /// Upper limit of the integral; infinite for closed forms.
    pub t_max: f64,
    pub rule: Quadrature,
    pub provenance: String,
}

/// `H`, with the extremal eigenvalues of the symmetric parts of `𝓒` and `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionDiagnostic {
    pub h: DMatrix<f64>,
    pub min_sym_eig_c: f64,
    pub max_sym_eig_h: f64,
}

/// Relative ridge added to the covariance when it is close to singular.
pub const COVARIANCE_RIDGE: f64 = 1e-10;
/// Condition number above which the ridge is applied.
pub const RIDGE_TRIGGER: f64 = 1e8;
/// Condition number that remains unacceptable after regularization.
pub const MAX_CONDITION: f64 = 1e12;

fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    sym_part(m).symmetric_eigenvalues()
}

/// Smallest eigenvalue of `(M + Mᵀ)/2`.
pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

/// Largest eigenvalue of `(M + Mᵀ)/2`.
pub fn max_sym_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).max()
}

/// Inverse of a sample covariance. The ridge `1e-10 tr(Σ)/n` is added only when
/// the raw condition number exceeds [`RIDGE_TRIGGER`], so well-conditioned
/// covariances give `C(0) = I` to round-off.
fn regularized_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let cond = |m: &DMatrix<f64>| {
        let e = m.clone().symmetric_eigenvalues();
        let (lo, hi) = (e.min(), e.max());
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    };
    let mut s = sym_part(sigma);
    let mut c = cond(&s);
    if c > RIDGE_TRIGGER {
        let ridge = COVARIANCE_RIDGE * s.trace() / n as f64;
        for i in 0..n {
            s[(i, i)] += ridge;
        }
        c = cond(&s);
        if c > MAX_CONDITION {
            return Err(Error::IllConditioned { condition: c });
        }
    }
    s.cholesky()
        .map(|ch| ch.inverse())
        .ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })
}

/// Quasi-Gaussian response `C_G(s) = R(s) Σ⁻¹` from a sampled trajectory, on the
/// trajectory's own sample grid, for lags up to `max_lag`.
pub fn quasi_gaussian_curve(
    traj: &Trajectory,
    max_lag: f64,
    base_point: &[f64],
) -> Result<ResponseCurve> {
    let channels: Vec<Vec<f64>> = (0..traj.dim).map(|c| traj.channel(c)).collect();
    quasi_gaussian_from_channels(channels, traj.dt_sample, max_lag, base_point)
}

/// As [`quasi_gaussian_curve`], from one series per coordinate.
pub fn quasi_gaussian_from_channels(
    mut channels: Vec<Vec<f64>>,
    dt_sample: f64,
    max_lag: f64,
    base_point: &[f64],
) -> Result<ResponseCurve> {
    let n = channels.first().map_or(0, |c| c.len());
    let n_lag = step_count(max_lag, dt_sample) as usize;
    if n < 2 || n_lag >= n / 2 {
        return Err(Error::InvalidInput(format!(
            "series of {n} samples is too short for {n_lag} lags"
        )));
    }
    lagged::center(&mut channels);
    let cov = lagged::cross_covariances(&channels, n_lag);
    let inv = regularized_inverse(&cov[0])?;
    Ok(ResponseCurve {
        lags: (0..=n_lag).map(|k| k as f64 * dt_sample).collect(),
        matrices: cov.iter().map(|r| r * &inv).collect(),
        base_point: base_point.to_vec(),
        estimator: Estimator::QuasiGaussian,
    })
}

/// Averages every matrix over the cyclic index shifts `k -> k + m·shift`.
///
/// For a ring system whose frozen slow forcing is uniform, this is an exact
/// symmetry of `C(s)` and only removes sampling noise.
pub fn shift_average(curve: &ResponseCurve, shift: usize) -> ResponseCurve {
    let n = curve.dim();
    let shift = shift.max(1);
    let orbit = n / shift;
    let avg = |m: &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |a, b| {
            (0..orbit)
                .map(|r| m[((a + r * shift) % n, (b + r * shift) % n)])
                .sum::<f64>()
                / orbit as f64
        })
    };
    ResponseCurve {
        lags: curve.lags.clone(),
        matrices: curve.matrices.iter().map(avg).collect(),
        base_point: curve.base_point.clone(),
        estimator: curve.estimator,
    }
}

/// Sampling error of `C(s)` in Frobenius norm, from the spread of curves over
/// `batches` consecutive segments of the trajectory. `shift`, when given, is
/// applied to every batch curve.
pub fn batch_noise(
    traj: &Trajectory,
    max_lag: f64,
    batches: usize,
    shift: Option<usize>,
) -> Result<Vec<f64>> {
    if batches < 2 {
        return Err(Error::InvalidInput("need at least two batches".into()));
    }
    let per = traj.len() / batches;
    let curves = (0..batches)
        .map(|b| {
            let channels = (0..traj.dim)
                .map(|c| (b * per..(b + 1) * per).map(|k| traj.state(k)[c]).collect())
                .collect();
            let c = quasi_gaussian_from_channels(channels, traj.dt_sample, max_lag, &[])?;
            Ok(match shift {
                Some(s) => shift_average(&c, s),
                None => c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nb = batches as f64;
    Ok((0..curves[0].lags.len())
        .map(|k| {
            let mean = curves.iter().map(|c| &c.matrices[k]).sum::<DMatrix<f64>>() / nb;
            let ss: f64 = curves
                .iter()
                .map(|c| (&c.matrices[k] - &mean).norm_squared())
                .sum();
            // error of a mean over the whole run, from batch scatter
            (ss / (nb - 1.0) / nb).sqrt()
        })
        .collect())
}

/// Where tangent-exact base points are drawn along the fast trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentSampling {
    pub n_samples: usize,
    pub t_spinup: f64,
    pub t_spacing: f64,
}

/// Averages tangent maps started at `base_points`, recorded every
/// `cfg.sample_stride` steps up to `max_lag`.
pub fn average_tangent_curve<F: Linearized + Sync>(
    field: &F,
    base_points: &[Vec<f64>],
    max_lag: f64,
    cfg: &IntegratorConfig,
) -> Result<ResponseCurve> {
    cfg.validate()?;
    if base_points.is_empty() {
        return Err(Error::InvalidInput("no base points".into()));
    }
    let d = field.dim();
    let n_lag = step_count(max_lag, cfg.dt_sample()) as usize;
    let stride = cfg.sample_stride;
    let one = |z0: &Vec<f64>| -> Result<Vec<DMatrix<f64>>> {
        let mut s = z0.clone();
        let mut m = DMatrix::identity(d, d);
        let mut stepper = TangentStepper::new(d);
        let mut out = Vec::with_capacity(n_lag + 1);
        out.push(m.clone());
        for k in 1..=n_lag {
            for _ in 0..stride {
                if !stepper.step(field, &mut s, &mut m, cfg.dt) {
                    return Err(Error::BlowUp {
                        step: (k * stride) as u64,
                        time: k as f64 * cfg.dt_sample(),
                    });
                }
            }
            out.push(m.clone());
        }
        Ok(out)
    };
    let mut sum = vec![DMatrix::zeros(d, d); n_lag + 1];
    // batches bound memory; the reduction runs in base-point order
    for batch in base_points.chunks(64) {
        let curves: Vec<Result<Vec<DMatrix<f64>>>> = batch.par_iter().map(one).collect();
        for c in curves {
            for (acc, m) in sum.iter_mut().zip(c?) {
                *acc += m;
            }
        }
    }
    let w = 1.0 / base_points.len() as f64;
    Ok(ResponseCurve {
        lags: (0..=n_lag).map(|k| k as f64 * cfg.dt_sample()).collect(),
        matrices: sum.into_iter().map(|m| m * w).collect(),
        base_point: Vec::new(),
        estimator: Estimator::TangentExact,
    })
}

/// Base points spaced along one long run of `field`.
pub fn sample_base_points<F: VectorField>(
    field: &F,
    z0: &[f64],
    sampling: &TangentSampling,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut z = z0.to_vec();
    advance(field, &mut z, sampling.t_spinup, dt, &mut [])?;
    let mut pts = Vec::with_capacity(sampling.n_samples);
    for k in 0..sampling.n_samples {
        if k > 0 {
            advance(field, &mut z, sampling.t_spacing, dt, &mut [])?;
        }
        pts.push(z.clone());
    }
    Ok(pts)
}

/// Tangent-exact response of the fast limiting system at frozen `x_fixed`.
pub fn tangent_exact_curve(
    p: &ModelParams,
    x_fixed: &[f64],
    max_lag: f64,
    sampling: &TangentSampling,
    cfg: &IntegratorConfig,
) -> Result<ResponseCurve> {
    let field = FastLimitingModel::new(p, x_fixed)?;
    let z0 = normal_vec(&mut member_rng(cfg.seed, 0), p.n_y());
    let pts = sample_base_points(&field, &z0, sampling, cfg.dt)?;
    let mut curve = average_tangent_curve(&field, &pts, max_lag, cfg)?;
    curve.base_point = x_fixed.to_vec();
    Ok(curve)
}

/// Trapezoidal integral of the curve over `[0, t_max]`; a partial last interval
/// is interpolated linearly.
pub fn integrate_curve(curve: &ResponseCurve, t_max: f64) -> Result<ResponseOperator> {
    let extent = curve.extent();
    if t_max > extent * (1.0 + 1e-12) || t_max < 0.0 {
        return Err(Error::Range {
            requested: t_max,
            available: extent,
        });
    }
    let d = curve.dim();
    let mut acc = DMatrix::zeros(d, d);
    for k in 0..curve.lags.len() - 1 {
        let (a, b) = (curve.lags[k], curve.lags[k + 1]);
        if a >= t_max {
            break;
        }
        let (m0, m1) = (&curve.matrices[k], &curve.matrices[k + 1]);
        if b <= t_max * (1.0 + 1e-12) {
            acc += (m0 + m1) * (0.5 * (b - a));
        } else {
            let frac = (t_max - a) / (b - a);
            let end = m0 + (m1 - m0) * frac;
            acc += (m0 + end) * (0.5 * (t_max - a));
        }
    }
    Ok(ResponseOperator {
        matrix: acc,
        t_max,
        rule: Quadrature::Trapezoid,
        provenance: format!(
            "{} curve, lag step {}, integrated to {t_max}",
            curve.estimator,
            curve.lag_step()
        ),
    })
}

/// Rule for truncating the infinite-time integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationRule {
    pub threshold: f64,
    pub lookahead: f64,
    pub cap: f64,
    /// With a noise curve, the effective threshold at lag `s` is
    /// `max(threshold, noise_multiple * noise(s))`.
    pub noise_multiple: f64,
}

impl Default for TruncationRule {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            lookahead: 1.0,
            cap: 50.0,
            noise_multiple: 2.0,
        }
    }
}

impl TruncationRule {
    /// First lag `s` at which `‖C‖_F` stays below the threshold over
    /// `[s, s + lookahead]`, capped at `cap` and at the curve extent.
    pub fn select(&self, curve: &ResponseCurve) -> f64 {
        self.select_inner(curve, None)
    }

    /// As [`select`](Self::select), with the threshold raised to a multiple of
    /// the per-lag sampling error.
    pub fn select_with_noise(&self, curve: &ResponseCurve, noise: &[f64]) -> f64 {
        self.select_inner(curve, Some(noise))
    }

    fn select_inner(&self, curve: &ResponseCurve, noise: Option<&[f64]>) -> f64 {
        let norms = curve.norms();
        let below = |k: usize| {
            let floor = noise.map_or(0.0, |n| self.noise_multiple * n[k]);
            norms[k] < self.threshold.max(floor)
        };
        let ahead = (self.lookahead / curve.lag_step()).round() as usize;
        let limit = self.cap.min(curve.extent());
        for k in 0..norms.len() {
            if curve.lags[k] > limit || k + ahead >= norms.len() {
                break;
            }
            if (k..=k + ahead).all(below) {
                return curve.lags[k];
            }
        }
        limit
    }
}

/// Integrates the curve up to the lag chosen by `rule`.
pub fn infinite_time_operator(
    curve: &ResponseCurve,
    rule: &TruncationRule,
) -> Result<ResponseOperator> {
    truncate(curve, rule, None)
}

/// Integrates the curve up to the lag chosen by `rule` against a noise curve.
pub fn infinite_time_operator_with_noise(
    curve: &ResponseCurve,
    rule: &TruncationRule,
    noise: &[f64],
) -> Result<ResponseOperator> {
    truncate(curve, rule, Some(noise))
}

fn truncate(
    curve: &ResponseCurve,
    rule: &TruncationRule,
    noise: Option<&[f64]>,
) -> Result<ResponseOperator> {
    let t_max = rule.select_inner(curve, noise);
    let mut op = integrate_curve(curve, t_max)?;
    op.provenance = format!(
        "{}; truncated where |C|_F < {} over lookahead {} (cap {}){}",
        op.provenance,
        rule.threshold,
        rule.lookahead,
        rule.cap,
        if noise.is_some() {
            format!(" or below {} sampling errors", rule.noise_multiple)
        } else {
            String::new()
        }
    );
    Ok(op)
}

/// `H = -scale * L 𝓒 Lᵀ` with a general coupling matrix.
pub fn h_from_coupling(c: &DMatrix<f64>, l: &DMatrix<f64>, scale: f64) -> SuppressionDiagnostic {
    let h = -(l * c * l.transpose()) * scale;
    SuppressionDiagnostic {
        min_sym_eig_c: min_sym_eig(c),
        max_sym_eig_h: max_sym_eig(&h),
        h,
    }
}

/// `H = -(λ_x λ_y / J) L 𝓒 Lᵀ` using the block-sum structure of the Lorenz `L`.
pub fn h_matrix(op: &ResponseOperator, p: &ModelParams) -> Result<SuppressionDiagnostic> {
    let c = &op.matrix;
    check_len("response operator", p.n_y(), c.nrows())?;
    let (n_x, j) = (p.n_x, p.j);
    let scale = p.lambda_x * p.lambda_y / j as f64;
    // (L 𝓒 Lᵀ)_{ab} = sum over the J x J block (a, b); the two minus signs cancel
    let h = DMatrix::from_fn(n_x, n_x, |a, b| {
        let mut s = 0.0;
        for r in a * j..(a + 1) * j {
            for q in b * j..(b + 1) * j {
                s += c[(r, q)];
            }
        }
        -scale * s
    });
    Ok(SuppressionDiagnostic {
        min_sym_eig_c: min_sym_eig(c),
        max_sym_eig_h: max_sym_eig(&h),
        h,
    })
}

/// Closed-form OU response `𝓒 = Γ⁻¹`.
pub fn ou_response_analytic(q: &OUParams) -> Result<ResponseOperator> {
    let inv = q
        .gamma
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { what: "gamma" })?;
    Ok(ResponseOperator {
        matrix: inv,
        t_max: f64::INFINITY,
        rule: Quadrature::ClosedForm,
        provenance: "closed form Gamma^-1".into(),
    })
}

/// Length of the fast run behind an averaged drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastBudget {
    pub t_spinup: f64,
    pub t_run: f64,
    pub dt: f64,
    pub seed: u64,
    /// Batches used for the batch-means standard error.
    pub batches: usize,
}

impl FastBudget {
    pub fn doubled(&self) -> Self {
        Self {
            t_run: 2.0 * self.t_run,
            ..*self
        }
    }
}

/// Averaged slow drift with a batch-means standard error per component.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDrift {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Time-mean of a fast process with batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct FastMean {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

fn batch_means(batches: &[Vec<f64>]) -> FastMean {
    let nb = batches.len() as f64;
    let d = batches[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|c| batches.iter().map(|b| b[c]).sum::<f64>() / nb)
        .collect();
    let std_error = (0..d)
        .map(|c| {
            let var = batches.iter().map(|b| (b[c] - mean[c]).powi(2)).sum::<f64>() / (nb - 1.0);
            (var / nb).sqrt()
        })
        .collect();
    FastMean { mean, std_error }
}

/// Time-mean of a deterministic fast field, split into batches.
pub fn fast_time_mean<F: VectorField>(field: &F, z0: &[f64], budget: &FastBudget) -> Result<FastMean> {
    let batches = budget.batches.max(2);
    let mut z = z0.to_vec();
    advance(field, &mut z, budget.t_spinup, budget.dt, &mut [])?;
    let steps = step_count(budget.t_run / batches as f64, budget.dt);
    let mut rk = Rk2::new(z.len());
    let mut out = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut acc = vec![0.0; z.len()];
        for step in 0..steps {
            if !rk.step(field, &mut z, budget.dt) {
                return Err(Error::BlowUp {
                    step,
                    time: step as f64 * budget.dt,
                });
            }
            acc.iter_mut().zip(&z).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= steps as f64);
        out.push(acc);
    }
    Ok(batch_means(&out))
}

/// Time-mean of an OU process, split into batches.
pub fn ou_time_mean(q: &OUParams, forcing: &[f64], budget: &FastBudget) -> Result<FastMean> {
    check_len("forcing", q.dim(), forcing.len())?;
    let batches = budget.batches.max(2);
    let mut rng = member_rng(budget.seed, 0);
    let mut em = EulerMaruyama::new(q);
    let mut z = q.stationary_mean(forcing)?.as_slice().to_vec();
    for _ in 0..step_count(budget.t_spinup, budget.dt) {
        em.step(q, &mut z, forcing, budget.dt, &mut rng);
    }
    let steps = step_count(budget.t_run / batches as f64, budget.dt);
    let mut out = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut acc = vec![0.0; z.len()];
        for _ in 0..steps {
            em.step(q, &mut z, forcing, budget.dt, &mut rng);
            acc.iter_mut().zip(&z).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= steps as f64);
        out.push(acc);
    }
    Ok(batch_means(&out))
}

/// Averaged slow drift `f(x) + A ⟨z⟩` for a linear slow coupling `A` and an
/// already estimated fast mean.
pub fn averaged_drift(slow: &[f64], coupling: &DMatrix<f64>, fast: &FastMean) -> AveragedDrift {
    let a = coupling;
    let value = (0..slow.len())
        .map(|i| slow[i] + (0..fast.mean.len()).map(|k| a[(i, k)] * fast.mean[k]).sum::<f64>())
        .collect();
    // Components of the mean are treated as independent for the error bar.
    let std_error = (0..slow.len())
        .map(|i| {
            (0..fast.mean.len())
                .map(|k| (a[(i, k)] * fast.std_error[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    AveragedDrift { value, std_error }
}

/// Averaged slow drift of the two-scale model at `x`: the rescaled L96 drift plus
/// `-(λ_y/J)` times the block sums of the fast limiting mean at frozen `x`.
pub fn averaged_slow_rhs(x: &[f64], p: &ModelParams, budget: &FastBudget) -> Result<AveragedDrift> {
    check_len("slow state", p.n_x, x.len())?;
    let slow_model = RingModel {
        n: p.n_x,
        coef: p.slow_stencil(),
        orientation: crate::dynamics::Orientation::Forward,
    };
    let mut slow = vec![0.0; p.n_x];
    slow_model.eval(x, &mut slow);
    if p.lambda_y == 0.0 {
        return Ok(AveragedDrift {
            value: slow,
            std_error: vec![0.0; p.n_x],
        });
    }
    let fast = FastLimitingModel::new(p, x)?;
    let z0 = normal_vec(&mut member_rng(budget.seed, 0), p.n_y());
    let mean = fast_time_mean(&fast, &z0, budget)?;
    let coupling = crate::dynamics::lorenz_coupling_matrix(p.n_x, p.j) * (p.lambda_y / p.j as f64);
    Ok(averaged_drift(&slow, &coupling, &mean))
}

/// Averaged slow tangent map along a sampled slow trajectory:
/// `dTX/dt = (∂f/∂x(x(t)) + H(x(t))) TX`, stepped with Heun on the sample grid.
pub fn propagate_averaged_tangent<H>(
    x_traj: &Trajectory,
    h_field: H,
    p: &ModelParams,
) -> Result<TangentMap>
where
    H: Fn(&[f64]) -> DMatrix<f64>,
{
    check_len("slow trajectory", p.n_x, x_traj.dim)?;
    let slow = RingModel {
        n: p.n_x,
        coef: p.slow_stencil(),
        orientation: crate::dynamics::Orientation::Forward,
    };
    let dt = x_traj.dt_sample;
    let gen = |x: &[f64]| slow.jacobian(x) + h_field(x);
    let mut m = DMatrix::identity(p.n_x, p.n_x);
    let mut a0 = gen(x_traj.state(0));
    for k in 1..x_traj.len() {
        let a1 = gen(x_traj.state(k));
        let k1 = &a0 * &m;
        let stage = &m + &k1 * dt;
        let k2 = &a1 * stage;
        m += (k1 + k2) * (0.5 * dt);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp {
                step: k as u64,
                time: x_traj.time(k),
            });
        }
        a0 = a1;
    }
    Ok(TangentMap {
        base_state: x_traj.last().to_vec(),
        elapsed: (x_traj.len() - 1) as f64 * dt,
        m,
    })
}

/// Settings of the mean-stability probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub t_spinup: f64,
    /// Length of the forced (and reference unforced) run.
    pub t_on: f64,
    /// Window after removal over which the decay is measured.
    pub t_off_window: f64,
    pub n_members: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Outcome of the mean-stability probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    /// Estimated `d/dt ‖⟨δz⟩‖` right after the forcing is removed.
    pub rate: f64,
    /// One standard error of `rate`.
    pub noise_floor: f64,
    /// `|rate|` exceeds three noise floors.
    pub conclusive: bool,
}

fn finish_probe(v0: &[f64], increments: &[Vec<f64>], window: f64) -> ProbeResult {
    let k = increments.len() as f64;
    let d = v0.len();
    let mean: Vec<f64> = (0..d)
        .map(|c| increments.iter().map(|v| v[c]).sum::<f64>() / k)
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(v0);
    let moved: Vec<f64> = v0.iter().zip(&mean).map(|(a, b)| a + b).collect();
    let rate = (norm(&moved) - n0) / window;
    let noise_floor = if n0 > 0.0 {
        let proj: Vec<f64> = increments
            .iter()
            .map(|v| v.iter().zip(v0).map(|(a, b)| a * b).sum::<f64>() / n0)
            .collect();
        let pm = proj.iter().sum::<f64>() / k;
        let var = proj.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt() / window
    } else {
        0.0
    };
    ProbeResult {
        rate,
        noise_floor,
        conclusive: rate.abs() > 3.0 * noise_floor,
    }
}

/// Mean-stability probe for a deterministic fast field.
///
/// The mean shift `⟨δz⟩` is the difference of forced and unforced time-means; the
/// ensemble is drawn from the forced run and released without forcing for
/// `t_off_window`.
pub fn mean_stability_probe_for<F: VectorField + Clone + Sync>(
    field: &F,
    z0: &[f64],
    delta_f: &[f64],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    check_len("forcing", field.dim(), delta_f.len())?;
    let mut z = z0.to_vec();
    advance(field, &mut z, cfg.t_spinup, cfg.dt, &mut [])?;
    let budget = FastBudget {
        t_spinup: 0.0,
        t_run: cfg.t_on,
        dt: cfg.dt,
        seed: cfg.seed,
        batches: 10,
    };
    let reference = fast_time_mean(field, &z, &budget)?;
    let forced = Forced {
        inner: field.clone(),
        forcing: delta_f.to_vec(),
    };
    // forced spin-up, then the forced mean and the ensemble snapshots
    advance(&forced, &mut z, cfg.t_spinup, cfg.dt, &mut [])?;
    let spacing = cfg.t_on / cfg.n_members as f64;
    let mut members = Vec::with_capacity(cfg.n_members);
    let mut sum = vec![0.0; z.len()];
    let mut count = 0u64;
    let mut tally = |_: u64, _: f64, s: &[f64]| {
        sum.iter_mut().zip(s).for_each(|(a, v)| *a += v);
        count += 1;
    };
    for _ in 0..cfg.n_members {
        advance(&forced, &mut z, spacing, cfg.dt, &mut [&mut tally])?;
        members.push(z.clone());
    }
    let forced_mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let v0: Vec<f64> = forced_mean
        .iter()
        .zip(&reference.mean)
        .map(|(a, b)| a - b)
        .collect();
    let increments: Vec<Vec<f64>> = members
        .par_iter()
        .map(|m| {
            let mut s = m.clone();
            advance(field, &mut s, cfg.t_off_window, cfg.dt, &mut [])
                .map(|_| s.iter().zip(m).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    Ok(finish_probe(&v0, &increments, cfg.t_off_window))
}

/// Mean-stability probe of the fast limiting Lorenz system at frozen `x_fixed`.
pub fn mean_stability_probe(
    p: &ModelParams,
    x_fixed: &[f64],
    delta_f: &[f64],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let field = FastLimitingModel::new(p, x_fixed)?;
    let z0 = normal_vec(&mut member_rng(cfg.seed, 0), p.n_y());
    mean_stability_probe_for(&field, &z0, delta_f, cfg)
}

/// Mean-stability probe of an OU process.
pub fn mean_stability_probe_ou(
    q: &OUParams,
    delta_f: &[f64],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    check_len("forcing", q.dim(), delta_f.len())?;
    let zero = vec![0.0; q.dim()];
    let budget = FastBudget {
        t_spinup: cfg.t_spinup,
        t_run: cfg.t_on,
        dt: cfg.dt,
        seed: cfg.seed,
        batches: 10,
    };
    let reference = ou_time_mean(q, &zero, &budget)?;
    let mut rng = member_rng(cfg.seed, 1);
    let mut em = EulerMaruyama::new(q);
    let mut z = q.stationary_mean(delta_f)?.as_slice().to_vec();
    for _ in 0..step_count(cfg.t_spinup, cfg.dt) {
        em.step(q, &mut z, delta_f, cfg.dt, &mut rng);
    }
    let spacing = step_count(cfg.t_on / cfg.n_members as f64, cfg.dt).max(1);
    let mut members = Vec::with_capacity(cfg.n_members);
    let mut sum = vec![0.0; q.dim()];
    let mut count = 0u64;
    for _ in 0..cfg.n_members {
        for _ in 0..spacing {
            em.step(q, &mut z, delta_f, cfg.dt, &mut rng);
            sum.iter_mut().zip(&z).for_each(|(a, v)| *a += v);
            count += 1;
        }
        members.push(z.clone());
    }
    let v0: Vec<f64> = sum
        .iter()
        .zip(&reference.mean)
        .map(|(s, r)| s / count as f64 - r)
        .collect();
    let off_steps = step_count(cfg.t_off_window, cfg.dt);
    let increments: Vec<Vec<f64>> = members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut rng = member_rng(cfg.seed, 2 + k as u64);
            let mut em = EulerMaruyama::new(q);
            let mut s = m.clone();
            for _ in 0..off_steps {
                em.step(q, &mut s, &zero, cfg.dt, &mut rng);
            }
            s.iter().zip(m).map(|(a, b)| a - b).collect()
        })
        .collect();
    Ok(finish_probe(&v0, &increments, cfg.t_off_window))
}

/// OU drift as a linearized field, for tangent-exact checks against `e^{-sΓ}`.
pub fn ou_linear_field<'a>(q: &'a OUParams, forcing: &'a [f64]) -> OuDrift<'a> {
    OuDrift {
        params: q,
        forcing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::CalibrationRecord;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(j: usize) -> ModelParams {
        ModelParams {
            n_x: 4,
            j,
            f_x: 6.0,
            f_y: 12.0,
            lambda_x: 0.25,
            lambda_y: 0.25,
            epsilon: 0.01,
            calib_x: CalibrationRecord::from_moments(6.0, 4, 2.0, 3.0),
            calib_y: CalibrationRecord::from_moments(12.0, 4 * j, 3.0, 4.5),
        }
    }

    fn operator(m: DMatrix<f64>) -> ResponseOperator {
        ResponseOperator {
            matrix: m,
            t_max: 1.0,
            rule: Quadrature::Trapezoid,
            provenance: String::new(),
        }
    }

    #[test]
    fn h_of_identity_response() {
        let p = params(4);
        let d = h_matrix(&operator(DMatrix::identity(16, 16)), &p).unwrap();
        assert!((d.h.clone() + DMatrix::identity(4, 4) * 0.0625).amax() < 1e-15);
        assert_relative_eq!(d.max_sym_eig_h, -0.0625, max_relative = 1e-12);
        assert_relative_eq!(d.min_sym_eig_c, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn h_vanishes_without_coupling() {
        let mut p = params(3);
        p.lambda_x = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        let d = h_matrix(&operator(c.clone()), &p).unwrap();
        assert!(d.h.iter().all(|&v| v == 0.0));
        let d = h_from_coupling(&c, &DMatrix::zeros(4, 12), 1.0);
        assert!(d.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_sum_matches_explicit_coupling_product() {
        let p = params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        let fast = h_matrix(&operator(c.clone()), &p).unwrap();
        let l = crate::dynamics::lorenz_coupling_matrix(4, 3);
        let slow = h_from_coupling(&c, &l, p.lambda_x * p.lambda_y / 3.0);
        assert!((fast.h - slow.h).amax() < 1e-14);
    }

    #[test]
    fn min_sym_eig_special_cases() {
        assert_relative_eq!(min_sym_eig(&DMatrix::identity(5, 5)), 1.0, epsilon = 1e-14);
        let skew = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -2.0, -1.0, 0.0, 0.5, 2.0, -0.5, 0.0]);
        assert!(min_sym_eig(&skew).abs() < 1e-15);
    }

    fn constant_curve(m: DMatrix<f64>, n: usize, step: f64) -> ResponseCurve {
        ResponseCurve {
            lags: (0..=n).map(|k| k as f64 * step).collect(),
            matrices: vec![m; n + 1],
            base_point: vec![],
            estimator: Estimator::QuasiGaussian,
        }
    }

    #[test]
    fn integrating_constant_identity() {
        let c = constant_curve(DMatrix::identity(3, 3), 100, 0.05);
        let op = integrate_curve(&c, 5.0).unwrap();
        assert!((op.matrix - DMatrix::identity(3, 3) * 5.0).amax() < 1e-12);
        let op = integrate_curve(&c, 2.025).unwrap();
        assert!((op.matrix - DMatrix::identity(3, 3) * 2.025).amax() < 1e-12);
        assert!(matches!(integrate_curve(&c, 5.5), Err(Error::Range { .. })));
    }

    #[test]
    fn truncation_rule_finds_decay() {
        let lags: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let curve = ResponseCurve {
            matrices: lags
                .iter()
                .map(|s| DMatrix::identity(2, 2) * (-*s).exp())
                .collect(),
            lags,
            base_point: vec![],
            estimator: Estimator::QuasiGaussian,
        };
        let rule = TruncationRule::default();
        let t = rule.select(&curve);
        // sqrt(2) e^{-s} < 0.02  <=>  s > ln(50 sqrt 2)
        assert!((t - (50.0 * 2f64.sqrt()).ln()).abs() < 0.011, "{t}");
        let capped = TruncationRule {
            threshold: 1e-9,
            ..rule
        };
        assert_eq!(capped.select(&curve), 10.0);
    }

    #[test]
    fn analytic_ou_response() {
        let q = OUParams::new(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let op = ou_response_analytic(&q).unwrap();
        assert_eq!(op.matrix, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])));
        assert_eq!(op.t_max, f64::INFINITY);
    }

    #[test]
    fn averaged_rhs_without_fast_feedback() {
        let mut p = params(2);
        p.lambda_y = 0.0;
        let x = [0.3, -0.2, 1.0, 0.1];
        let budget = FastBudget {
            t_spinup: 1.0,
            t_run: 1.0,
            dt: 1e-3,
            seed: 0,
            batches: 4,
        };
        let d = averaged_slow_rhs(&x, &p, &budget).unwrap();
        let exact = crate::dynamics::rescaled_l96_rhs(&x, &p.calib_x).unwrap();
        assert_eq!(d.value, exact);
    }

    #[test]
    fn averaged_tangent_with_scalar_damping() {
        let p = params(2);
        let cfg = IntegratorConfig::new(1e-3, 10, 0).unwrap();
        let slow = RingModel::rescaled(4, &p.calib_x).unwrap();
        let x_traj = crate::integrate::integrate(&slow, &[0.5, -0.3, 0.2, 0.9], 2.0, &cfg, &mut [])
            .unwrap();
        let c = 0.4;
        let free = propagate_averaged_tangent(&x_traj, |_| DMatrix::zeros(4, 4), &p).unwrap();
        let damped =
            propagate_averaged_tangent(&x_traj, |_| DMatrix::identity(4, 4) * -c, &p).unwrap();
        let ratio = damped.m.norm() / free.m.norm();
        let exact = (-c * free.elapsed).exp();
        assert!((ratio / exact - 1.0).abs() < 1e-3, "{ratio} vs {exact}");
    }
}
