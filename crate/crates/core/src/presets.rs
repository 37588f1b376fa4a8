//! Bundled parameter sets and the pipelines that regenerate the published
//! tables and figures.

use std::fmt;
use std::str::FromStr;

use crate::calibrate::{CalibrationRecord, Calibrator};
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::integrate::{advance, integrate, member_rng, normal_vec, IntegratorConfig};
use crate::response::{
    batch_noise, h_matrix, integrate_curve, quasi_gaussian_curve, shift_average, ResponseCurve,
    ResponseOperator, SuppressionDiagnostic, TruncationRule,
};
use crate::stats::{
    divergence_two_scale, divergence_uncoupled, two_scale_moments, DivergenceProfile,
    DivergenceProtocol, TwoScaleMoments,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Validation(format!(
                "unknown scale `{other}` (expected desk or paper)"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

/// Run lengths shared by the coupled-model presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSettings {
    pub dt: f64,
    pub t_spinup: f64,
    pub t_window: f64,
    pub n_members: usize,
}

impl Scale {
    pub fn settings(self) -> ScaleSettings {
        match self {
            Scale::Desk => ScaleSettings {
                dt: 1e-4,
                t_spinup: 200.0,
                t_window: 2000.0,
                n_members: 100,
            },
            Scale::Paper => ScaleSettings {
                dt: 1e-5,
                t_spinup: 1000.0,
                t_window: 10000.0,
                n_members: 500,
            },
        }
    }

    pub fn divergence_protocol(self, delta: f64, seed: u64) -> DivergenceProtocol {
        let s = self.settings();
        DivergenceProtocol {
            t_spinup: s.t_spinup,
            n_members: s.n_members,
            ..DivergenceProtocol::desk(delta, seed)
        }
    }
}

/// Published long-run moments of one regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub f_y: f64,
    pub x_mean: f64,
    pub x_var: f64,
    pub y_mean: f64,
    pub y_var: f64,
}

const fn row(f_y: f64, x_mean: f64, x_var: f64, y_mean: f64, y_var: f64) -> ReferenceRow {
    ReferenceRow {
        f_y,
        x_mean,
        x_var,
        y_mean,
        y_var,
    }
}

/// `N_x = 10, J = 4, λ = 0.25`.
pub const TABLE1: [ReferenceRow; 5] = [
    row(6.0, 9.64e-3, 0.9451, -2.38e-3, 1.066),
    row(8.0, 2.817e-2, 0.9514, -1.466e-2, 1.098),
    row(12.0, 2.05e-2, 0.9336, -2.719e-2, 1.139),
    row(16.0, -1.353e-2, 0.9006, -4.028e-2, 1.153),
    row(24.0, -6.972e-2, 0.8434, -6.075e-2, 1.167),
];

/// `N_x = 20, J = 4, λ = 0.35`.
pub const TABLE2: [ReferenceRow; 4] = [
    row(6.0, 6.216e-3, 0.8878, -9.982e-3, 1.119),
    row(8.0, 2.34e-2, 0.8728, -2.791e-2, 1.19),
    row(12.0, -0.1363, 0.6927, -5.553e-2, 1.168),
    row(16.0, -0.1444, 0.6703, -8.669e-2, 1.199),
];

pub fn reference(table: &[ReferenceRow], f_y: f64) -> Option<ReferenceRow> {
    table.iter().copied().find(|r| r.f_y == f_y)
}

/// Uncalibrated description of a two-scale regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub n_x: usize,
    pub j: usize,
    pub f_x: f64,
    pub f_y: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Regime {
    pub fn table1(f_y: f64) -> Self {
        Self {
            n_x: 10,
            j: 4,
            f_x: 6.0,
            f_y,
            lambda: 0.25,
            epsilon: 0.01,
        }
    }

    pub fn table2(f_y: f64) -> Self {
        Self {
            n_x: 20,
            lambda: 0.35,
            ..Self::table1(f_y)
        }
    }

    pub fn slow_calibration(&self, calib: &Calibrator) -> Result<CalibrationRecord> {
        calib.get(self.f_x, self.n_x)
    }

    /// Calibrates `x` on the slow ring and `y` on the flat fast ring.
    pub fn params(&self, calib: &Calibrator) -> Result<ModelParams> {
        let p = ModelParams {
            n_x: self.n_x,
            j: self.j,
            f_x: self.f_x,
            f_y: self.f_y,
            lambda_x: self.lambda,
            lambda_y: self.lambda,
            epsilon: self.epsilon,
            calib_x: self.slow_calibration(calib)?,
            calib_y: calib.get(self.f_y, self.n_x * self.j)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Long-run moments for each regime, in order.
pub fn moments_table(
    params: &[ModelParams],
    s: &ScaleSettings,
    seed: u64,
) -> Result<Vec<TwoScaleMoments>> {
    params
        .iter()
        .map(|p| two_scale_moments(p, s.dt, s.t_spinup, s.t_window, seed))
        .collect()
}

/// Divergence profiles of the uncoupled model and of each coupled regime.
pub struct DivergenceSweep {
    pub uncoupled: DivergenceProfile,
    pub coupled: Vec<(f64, DivergenceProfile)>,
}

pub fn divergence_sweep(
    params: &[ModelParams],
    dt: f64,
    protocol: &DivergenceProtocol,
) -> Result<DivergenceSweep> {
    let first = params
        .first()
        .ok_or_else(|| Error::InvalidInput("empty regime list".into()))?;
    let uncoupled = divergence_uncoupled(first.n_x, &first.calib_x, dt, protocol)?;
    let coupled = params
        .iter()
        .map(|p| Ok((p.f_y, divergence_two_scale(p, dt, protocol)?)))
        .collect::<Result<_>>()?;
    Ok(DivergenceSweep { uncoupled, coupled })
}

/// Settings of the quasi-Gaussian eigenvalue sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSweepSettings {
    /// Length of the fast limiting run, in fast time.
    pub t_run: f64,
    pub t_spinup: f64,
    pub dt: f64,
    pub sample_stride: usize,
    pub max_lag: f64,
    /// Batches behind the sampling-error estimate of `C(s)`.
    pub batches: usize,
    pub rule: TruncationRule,
    /// Average over cyclic shifts of the fast ring.
    pub shift_symmetrize: bool,
    /// Coupled run used to locate the long-run slow mean.
    pub slow_mean_window: f64,
    pub slow_mean_dt: f64,
    /// Fixed slow base value instead of the coupled-run mean.
    pub x_bar: Option<f64>,
    /// Fixed integration horizon instead of the common resolved lag.
    pub t_max: Option<f64>,
}

impl Default for ResponseSweepSettings {
    fn default() -> Self {
        Self {
            t_run: 2000.0,
            t_spinup: 50.0,
            dt: 1e-3,
            sample_stride: 10,
            max_lag: 12.0,
            batches: 10,
            rule: TruncationRule {
                noise_multiple: 3.0,
                ..TruncationRule::default()
            },
            shift_symmetrize: true,
            slow_mean_window: 200.0,
            slow_mean_dt: 1e-4,
            x_bar: None,
            t_max: None,
        }
    }
}

/// One regime of the eigenvalue sweep.
#[derive(Debug, Clone)]
pub struct ResponseRow {
    pub f_y: f64,
    pub x_bar: f64,
    /// Lag at which this regime's curve reaches its sampling noise.
    pub t_resolved: f64,
    pub curve: ResponseCurve,
    pub operator: ResponseOperator,
    pub diagnostic: SuppressionDiagnostic,
}

/// Quasi-Gaussian response at the long-run slow mean for each regime.
///
/// Every operator is integrated to a common horizon: the shortest lag at which
/// any regime's `‖C‖_F` has fallen into its own sampling noise.
pub fn response_sweep(
    params: &[ModelParams],
    s: &ResponseSweepSettings,
    seed: u64,
) -> Result<(f64, Vec<ResponseRow>)> {
    let mut staged = Vec::with_capacity(params.len());
    for p in params {
        let x_bar = match s.x_bar {
            Some(v) => v,
            None => long_run_slow_mean(p, s, seed)?,
        };
        let x = vec![x_bar; p.n_x];
        let field = crate::dynamics::FastLimitingModel::new(p, &x)?;
        let cfg = IntegratorConfig::new(s.dt, s.sample_stride, seed)?;
        let mut z0 = normal_vec(&mut member_rng(seed, 0), p.n_y());
        advance(&field, &mut z0, s.t_spinup, s.dt, &mut [])?;
        let traj = integrate(&field, &z0, s.t_run, &cfg, &mut [])?;
        let shift = s.shift_symmetrize.then_some(1);
        let mut curve = quasi_gaussian_curve(&traj, s.max_lag, &x)?;
        if let Some(k) = shift {
            curve = shift_average(&curve, k);
        }
        let noise = batch_noise(&traj, s.max_lag, s.batches, shift)?;
        let t_resolved = s.rule.select_with_noise(&curve, &noise);
        staged.push((p, x_bar, t_resolved, curve));
    }
    let horizon = s.t_max.unwrap_or_else(|| {
        staged
            .iter()
            .map(|r| r.2)
            .fold(f64::INFINITY, f64::min)
    });
    let rows = staged
        .into_iter()
        .map(|(p, x_bar, t_resolved, curve)| {
            let mut operator = integrate_curve(&curve, horizon)?;
            operator.provenance = match s.t_max {
                Some(_) => format!("{}; fixed horizon", operator.provenance),
                None => format!(
                    "{}; common horizon: shortest lag where any regime's |C|_F falls \
                     below {} sampling errors (own resolved lag {t_resolved:.3})",
                    operator.provenance, s.rule.noise_multiple
                ),
            };
            let diagnostic = h_matrix(&operator, p)?;
            Ok(ResponseRow {
                f_y: p.f_y,
                x_bar,
                t_resolved,
                curve,
                operator,
                diagnostic,
            })
        })
        .collect::<Result<_>>()?;
    Ok((horizon, rows))
}

/// Pooled slow mean of a short coupled run.
pub fn long_run_slow_mean(p: &ModelParams, s: &ResponseSweepSettings, seed: u64) -> Result<f64> {
    Ok(two_scale_moments(
        p,
        s.slow_mean_dt,
        0.1 * s.slow_mean_window,
        s.slow_mean_window,
        seed,
    )?
    .x
    .mean)
}

/// True when `values` is strictly increasing.
pub fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] < w[1])
}

/// Relative energy drift of the conservative two-scale model at `dt` and `dt/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyCheck {
    pub dt: f64,
    pub t_len: f64,
    pub e0: f64,
    pub drift: f64,
    pub drift_half: f64,
}

impl EnergyCheck {
    /// Drift ratio under step halving; about 4 for a second-order scheme.
    pub fn ratio(&self) -> f64 {
        self.drift / self.drift_half
    }
}

/// Integrates the conservative model from a seeded standard-normal state.
pub fn energy_check(p: &ModelParams, dt: f64, t_len: f64, seed: u64) -> Result<EnergyCheck> {
    let model = crate::dynamics::TwoScaleModel::conservative(p)?;
    let s0 = normal_vec(&mut member_rng(seed, 0), p.dim());
    let energy = |s: &[f64]| {
        let (x, y) = s.split_at(p.n_x);
        crate::dynamics::total_energy(
            &crate::dynamics::State {
                x: x.to_vec(),
                y: y.to_vec(),
            },
            p,
        )
        .total
    };
    let e0 = energy(&s0);
    let drift_at = |h: f64| -> Result<f64> {
        let mut s = s0.clone();
        advance(&model, &mut s, t_len, h, &mut [])?;
        Ok((energy(&s) - e0).abs() / e0)
    };
    Ok(EnergyCheck {
        dt,
        t_len,
        e0,
        drift: drift_at(dt)?,
        drift_half: drift_at(0.5 * dt)?,
    })
}
