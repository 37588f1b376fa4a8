//! Executes a validated configuration and writes its CSV outputs.

use std::time::Instant;

use crate::calibrate::{CalibrationCache, CalibrationRecord, Calibrator};
use crate::cli::config::{EstimatorChoice, ExperimentBlock, ExperimentConfig};
use crate::cli::output::{num, Csv, OutputDir, RunManifest, Seeds};
use crate::dynamics::ModelParams;
use crate::error::Result;
use crate::integrate::{advance, integrate, member_rng, normal_vec, IntegratorConfig};
use crate::presets::{self, ResponseSweepSettings};
use crate::response::{
    h_matrix, infinite_time_operator, integrate_curve, tangent_exact_curve, ResponseCurve,
    ResponseOperator, SuppressionDiagnostic, TangentSampling, TruncationRule,
};
use crate::stats::{self, DivergenceProfile, DivergenceProtocol, MomentSummary, RangeMoments};

/// Directory name for one fast forcing, e.g. `fy6` or `fy12.5`.
pub fn regime_dir(f_y: f64) -> String {
    format!("fy{f_y}")
}

pub fn calibrator(cfg: &ExperimentConfig) -> Calibrator {
    let cache = cfg
        .calibration
        .cache
        .as_ref()
        .map(|c| CalibrationCache::new(cfg.output_dir.join(c)));
    Calibrator::new(cfg.calibration.settings, cache)
}

fn params(cfg: &ExperimentConfig, calib: &Calibrator, f_y: f64) -> Result<ModelParams> {
    let m = &cfg.model;
    let p = ModelParams {
        n_x: m.n_x,
        j: m.j,
        f_x: m.f_x,
        f_y,
        lambda_x: m.lambda_x,
        lambda_y: m.lambda_y,
        epsilon: m.epsilon,
        calib_x: calib.get(m.f_x, m.n_x)?,
        calib_y: calib.get(f_y, m.n_x * m.j)?,
    };
    p.validate()?;
    Ok(p)
}

fn model_meta(csv: Csv, p: &ModelParams) -> Csv {
    csv.meta("n_x", p.n_x)
        .meta("j", p.j)
        .meta("f_x", p.f_x)
        .meta("f_y", p.f_y)
        .meta("lambda_x", p.lambda_x)
        .meta("lambda_y", p.lambda_y)
        .meta("epsilon", p.epsilon)
        .meta("x_calibration", format!("mean {} beta {}", p.calib_x.mean, p.calib_x.beta))
        .meta("y_calibration", format!("mean {} beta {}", p.calib_y.mean, p.calib_y.beta))
}

/// Runs `cfg` into its output directory and writes the manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let text = cfg.to_text();
    out.write("config.txt", &text)?;
    let calib = calibrator(cfg);
    match &cfg.experiment {
        ExperimentBlock::Calibrate => run_calibrate(cfg, &calib, &mut out)?,
        ExperimentBlock::Simulate { t_spinup, t_len } => {
            run_simulate(cfg, &calib, *t_spinup, *t_len, &mut out)?
        }
        ExperimentBlock::Divergence { .. } => run_divergence(cfg, &calib, &mut out)?,
        ExperimentBlock::Response { .. } => run_response(cfg, &calib, &mut out)?,
        ExperimentBlock::Stats { .. } => run_stats(cfg, &calib, &mut out)?,
        ExperimentBlock::EnergyCheck { t_len } => run_energy(cfg, &calib, *t_len, &mut out)?,
    }
    RunManifest::finish(
        &out,
        cfg.kind().name(),
        &text,
        Seeds {
            integrator: cfg.integrator.seed,
            calibration: cfg.calibration.settings.seed,
        },
        started,
    )
}

pub fn calibration_csv(records: &[(&str, CalibrationRecord)]) -> Csv {
    let mut csv = Csv::new([
        "role", "f", "n", "mean", "beta", "dt", "t_total", "t_spinup", "seed", "fixed_point",
    ]);
    for (role, r) in records {
        csv.row(vec![
            role.to_string(),
            num(r.f),
            r.n.to_string(),
            num(r.mean),
            num(r.beta),
            num(r.dt),
            num(r.t_total),
            num(r.t_spinup),
            r.seed.to_string(),
            r.fixed_point.to_string(),
        ]);
    }
    csv
}

fn run_calibrate(cfg: &ExperimentConfig, calib: &Calibrator, out: &mut OutputDir) -> Result<()> {
    let m = &cfg.model;
    let x = calib.get(m.f_x, m.n_x)?;
    let y = calib.get(m.f_y, m.n_x * m.j)?;
    out.write("calibration.csv", &calibration_csv(&[("x", x), ("y", y)]).render())?;
    Ok(())
}

pub fn moments_csv(rows: &[(&str, MomentSummary)]) -> Csv {
    let mut csv = Csv::new(["channel_group", "mean", "variance", "count"]);
    for (name, m) in rows {
        csv.row(vec![
            name.to_string(),
            num(m.mean),
            num(m.variance),
            m.count.to_string(),
        ]);
    }
    csv
}

fn coupled_run(
    cfg: &ExperimentConfig,
    p: &ModelParams,
    t_spinup: f64,
    t_len: f64,
) -> Result<(crate::integrate::Trajectory, MomentSummary, MomentSummary)> {
    let model = crate::dynamics::TwoScaleModel::new(p)?;
    let g = &cfg.integrator;
    let icfg = IntegratorConfig::new(g.dt, g.sample_stride, g.seed)?;
    let mut s0 = normal_vec(&mut member_rng(g.seed, 0), p.dim());
    advance(&model, &mut s0, t_spinup, g.dt, &mut [])?;
    let mut xs = RangeMoments::new(0..p.n_x);
    let mut ys = RangeMoments::new(p.n_x..p.dim());
    let traj = integrate(&model, &s0, t_len, &icfg, &mut [&mut xs, &mut ys])?;
    Ok((traj, (&xs.moments).into(), (&ys.moments).into()))
}

fn run_simulate(
    cfg: &ExperimentConfig,
    calib: &Calibrator,
    t_spinup: f64,
    t_len: f64,
    out: &mut OutputDir,
) -> Result<()> {
    let p = params(cfg, calib, cfg.model.f_y)?;
    let (traj, mx, my) = coupled_run(cfg, &p, t_spinup, t_len)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..p.n_x).map(|i| format!("x{i}")));
    header.extend((0..p.n_y()).map(|k| format!("y{k}")));
    let mut csv = model_meta(Csv::new(header), &p)
        .meta("dt", cfg.integrator.dt)
        .meta("dt_sample", traj.dt_sample)
        .meta("seed", cfg.integrator.seed);
    for k in 0..traj.len() {
        let mut row = vec![traj.time(k)];
        row.extend_from_slice(traj.state(k));
        csv.row_f64(&row);
    }
    out.write("trajectory.csv", &csv.render())?;
    out.write("moments.csv", &moments_csv(&[("x", mx), ("y", my)]).render())?;
    Ok(())
}

pub fn divergence_csv(profile: &DivergenceProfile) -> Csv {
    let mut csv = Csv::new(["t", "mean_divergence", "n_members", "std_error"])
        .meta("members", profile.n_members)
        .meta("excluded", profile.n_excluded)
        .meta("delta", profile.delta)
        .meta("window", profile.window)
        .meta("perturbed", profile.perturbed);
    for (k, &t) in profile.times.iter().enumerate() {
        let e = profile.estimate_at(t);
        csv.row(vec![
            num(t),
            num(profile.divergence[k]),
            profile.n_members.to_string(),
            num(e.std_error),
        ]);
    }
    csv
}

fn run_divergence(cfg: &ExperimentConfig, calib: &Calibrator, out: &mut OutputDir) -> Result<()> {
    let ExperimentBlock::Divergence {
        f_y_values,
        t_spinup,
        members,
        spacing,
        horizon,
        delta,
        window,
        sample_dt,
        uncoupled,
    } = &cfg.experiment
    else {
        unreachable!()
    };
    let protocol = DivergenceProtocol {
        t_spinup: *t_spinup,
        n_members: *members,
        t_spacing: *spacing,
        t_horizon: *horizon,
        delta: *delta,
        window: *window,
        sample_dt: *sample_dt,
        seed: cfg.integrator.seed,
    };
    let dt = cfg.integrator.dt;
    if *uncoupled {
        let cx = calib.get(cfg.model.f_x, cfg.model.n_x)?;
        let prof = stats::divergence_uncoupled(cfg.model.n_x, &cx, dt, &protocol)?;
        let csv = divergence_csv(&prof)
            .meta("model", "uncoupled")
            .meta("dt", dt);
        out.write("uncoupled/divergence.csv", &csv.render())?;
    }
    for &f_y in f_y_values {
        let p = params(cfg, calib, f_y)?;
        let prof = stats::divergence_two_scale(&p, dt, &protocol)?;
        let csv = model_meta(divergence_csv(&prof), &p).meta("dt", dt);
        out.write(format!("{}/divergence.csv", regime_dir(f_y)), &csv.render())?;
    }
    Ok(())
}

pub fn curve_csv(curve: &ResponseCurve, stride: usize) -> Csv {
    let n = curve.dim();
    let mut header = vec!["lag".to_string()];
    for a in 0..n {
        for b in 0..n {
            header.push(format!("c_{a}_{b}"));
        }
    }
    let mut csv = Csv::new(header)
        .meta("estimator", curve.estimator)
        .meta("lag_step", curve.lag_step() * stride as f64);
    for (k, m) in curve.matrices.iter().enumerate().step_by(stride.max(1)) {
        let mut row = vec![curve.lags[k]];
        // row-major
        for a in 0..n {
            for b in 0..n {
                row.push(m[(a, b)]);
            }
        }
        csv.row_f64(&row);
    }
    csv
}

pub fn operator_csv(op: &ResponseOperator, diag: &SuppressionDiagnostic) -> Csv {
    let n = op.matrix.nrows();
    let mut csv = Csv::new((0..n).map(|b| format!("col_{b}")))
        .meta("t_max", op.t_max)
        .meta("quadrature", format!("{:?}", op.rule))
        .meta("provenance", &op.provenance)
        .meta("min_sym_eig_C", diag.min_sym_eig_c)
        .meta("max_sym_eig_H", diag.max_sym_eig_h);
    for a in 0..n {
        csv.row_f64(&op.matrix.row(a).iter().copied().collect::<Vec<_>>());
    }
    csv
}

pub fn diagnostic_csv(rows: &[(f64, f64, f64, &SuppressionDiagnostic)]) -> Csv {
    let mut csv = Csv::new(["F_y", "min_sym_eig_C", "max_sym_eig_H", "x_bar", "t_max"]);
    for (f_y, x_bar, t_max, d) in rows {
        csv.row_f64(&[*f_y, d.min_sym_eig_c, d.max_sym_eig_h, *x_bar, *t_max]);
    }
    csv
}

fn run_response(cfg: &ExperimentConfig, calib: &Calibrator, out: &mut OutputDir) -> Result<()> {
    let ExperimentBlock::Response {
        f_y_values,
        estimator,
        t_run,
        t_spinup,
        max_lag,
        x_bar,
        t_max,
        threshold,
        lookahead,
        cap,
        noise_multiple,
        batches,
        shift_symmetrize,
        n_samples,
        t_spacing,
        curve_stride,
    } = &cfg.experiment
    else {
        unreachable!()
    };
    let rule = TruncationRule {
        threshold: *threshold,
        lookahead: *lookahead,
        cap: *cap,
        noise_multiple: *noise_multiple,
    };
    let g = &cfg.integrator;
    let settings = ResponseSweepSettings {
        t_run: *t_run,
        t_spinup: *t_spinup,
        dt: g.dt,
        sample_stride: g.sample_stride,
        max_lag: *max_lag,
        batches: *batches,
        rule,
        shift_symmetrize: *shift_symmetrize,
        x_bar: *x_bar,
        t_max: *t_max,
        ..ResponseSweepSettings::default()
    };
    let all: Vec<ModelParams> = f_y_values
        .iter()
        .map(|&f| params(cfg, calib, f))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    match estimator {
        EstimatorChoice::QuasiGaussian => {
            let (_, sweep) = presets::response_sweep(&all, &settings, g.seed)?;
            for r in sweep {
                rows.push((r.f_y, r.x_bar, r.curve, r.operator, r.diagnostic));
            }
        }
        EstimatorChoice::TangentExact => {
            let icfg = IntegratorConfig::new(g.dt, g.sample_stride, g.seed)?;
            let sampling = TangentSampling {
                n_samples: *n_samples,
                t_spinup: *t_spinup,
                t_spacing: *t_spacing,
            };
            for p in &all {
                let xb = match x_bar {
                    Some(v) => *v,
                    None => presets::long_run_slow_mean(p, &settings, g.seed)?,
                };
                let curve = tangent_exact_curve(p, &vec![xb; p.n_x], *max_lag, &sampling, &icfg)?;
                let op = match t_max {
                    Some(t) => integrate_curve(&curve, *t)?,
                    None => infinite_time_operator(&curve, &rule)?,
                };
                let diag = h_matrix(&op, p)?;
                rows.push((p.f_y, xb, curve, op, diag));
            }
        }
    }
    for (f_y, _, curve, op, diag) in &rows {
        let dir = regime_dir(*f_y);
        out.write(
            format!("{dir}/response_curve.csv"),
            &curve_csv(curve, *curve_stride).meta("F_y", f_y).render(),
        )?;
        out.write(
            format!("{dir}/response_operator.csv"),
            &operator_csv(op, diag).meta("F_y", f_y).render(),
        )?;
    }
    let table: Vec<_> = rows
        .iter()
        .map(|(f, xb, _, op, d)| (*f, *xb, op.t_max, d))
        .collect();
    out.write("diagnostic.csv", &diagnostic_csv(&table).render())?;
    Ok(())
}

fn run_stats(cfg: &ExperimentConfig, calib: &Calibrator, out: &mut OutputDir) -> Result<()> {
    let ExperimentBlock::Stats {
        t_spinup,
        t_window,
        pdf_bins,
        pdf_lo,
        pdf_hi,
        acf_max_lag,
    } = &cfg.experiment
    else {
        unreachable!()
    };
    let p = params(cfg, calib, cfg.model.f_y)?;
    let (traj, mx, my) = coupled_run(cfg, &p, *t_spinup, *t_window)?;
    out.write(
        "moments.csv",
        &model_meta(moments_csv(&[("x", mx), ("y", my)]), &p).render(),
    )?;

    let channels: Vec<Vec<f64>> = (0..p.dim()).map(|c| traj.channel(c)).collect();
    let (xs, ys) = channels.split_at(p.n_x);
    let range = (*pdf_lo, *pdf_hi);
    let hx = stats::pdf(xs.iter().flatten(), *pdf_bins, range)?;
    let hy = stats::pdf(ys.iter().flatten(), *pdf_bins, range)?;
    let mut csv = model_meta(Csv::new(["channel_group", "bin_center", "density"]), &p);
    for (group, h) in [("x", &hx), ("y", &hy)] {
        for (c, d) in h.centers().iter().zip(&h.density) {
            csv.row(vec![group.to_string(), num(*c), num(*d)]);
        }
    }
    out.write("pdf.csv", &csv.render())?;

    let ax = stats::acf_pooled(&slices(xs), *acf_max_lag, traj.dt_sample)?;
    let ay = stats::acf_pooled(&slices(ys), *acf_max_lag, traj.dt_sample)?;
    let mut csv = model_meta(Csv::new(["channel_group", "lag", "value"]), &p)
        .meta("integrated_x", ax.integrated())
        .meta("integrated_y", ay.integrated());
    for (group, a) in [("x", &ax), ("y", &ay)] {
        for (l, v) in a.lags.iter().zip(&a.values) {
            csv.row(vec![group.to_string(), num(*l), num(*v)]);
        }
    }
    out.write("acf.csv", &csv.render())?;
    Ok(())
}

fn run_energy(
    cfg: &ExperimentConfig,
    calib: &Calibrator,
    t_len: f64,
    out: &mut OutputDir,
) -> Result<()> {
    let p = params(cfg, calib, cfg.model.f_y)?;
    let e = presets::energy_check(&p, cfg.integrator.dt, t_len, cfg.integrator.seed)?;
    let mut csv = model_meta(Csv::new(["dt", "relative_drift"]), &p)
        .meta("t_len", t_len)
        .meta("e0", e.e0)
        .meta("ratio", e.ratio());
    csv.row_f64(&[e.dt, e.drift]);
    csv.row_f64(&[0.5 * e.dt, e.drift_half]);
    out.write("energy.csv", &csv.render())?;
    Ok(())
}

fn slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}
