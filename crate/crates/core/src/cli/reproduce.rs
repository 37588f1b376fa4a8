//! Bundled presets that regenerate the published tables and figures.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::calibrate::{CalibrationCache, CalibrationSettings, Calibrator};
use crate::cli::output::{Csv, OutputDir, RunManifest, Seeds};
use crate::cli::run::{diagnostic_csv, divergence_csv, operator_csv, regime_dir};
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::presets::{self, ReferenceRow, Regime, ResponseSweepSettings, Scale, TABLE1, TABLE2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table1,
    Table2,
    Fig2,
    Fig4,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Table1, Preset::Table2, Preset::Fig2, Preset::Fig4];
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown preset `{s}` (expected table1, table2, fig2 or fig4)"
                ))
            })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Table1 => "table1",
            Preset::Table2 => "table2",
            Preset::Fig2 => "fig2",
            Preset::Fig4 => "fig4",
        })
    }
}

/// Fast forcings of the Table 1 sweep, reused by both figures.
pub const FIG_FORCINGS: [f64; 5] = [6.0, 8.0, 12.0, 16.0, 24.0];

fn calibrator(out: &Path) -> Calibrator {
    Calibrator::new(
        CalibrationSettings::default(),
        Some(CalibrationCache::new(out.join("calibration_cache.txt"))),
    )
}

fn params_for(regimes: &[Regime], calib: &Calibrator) -> Result<Vec<ModelParams>> {
    regimes.iter().map(|r| r.params(calib)).collect()
}

/// Moments next to the reference values of `table`.
pub fn comparison_csv(
    params: &[ModelParams],
    moments: &[crate::stats::TwoScaleMoments],
    table: &[ReferenceRow],
) -> Csv {
    let mut csv = Csv::new([
        "F_y",
        "x_mean",
        "x_var",
        "y_mean",
        "y_var",
        "paper_x_mean",
        "paper_x_var",
        "paper_y_mean",
        "paper_y_var",
    ]);
    for (p, m) in params.iter().zip(moments) {
        let r = presets::reference(table, p.f_y);
        let pick = |f: fn(&ReferenceRow) -> f64| r.as_ref().map_or(f64::NAN, f);
        csv.row_f64(&[
            p.f_y,
            m.x.mean,
            m.x.variance,
            m.y.mean,
            m.y.variance,
            pick(|r| r.x_mean),
            pick(|r| r.x_var),
            pick(|r| r.y_mean),
            pick(|r| r.y_var),
        ]);
    }
    csv
}

/// Runs `preset` at `scale` into `out_dir`.
pub fn reproduce(preset: Preset, scale: Scale, out_dir: &Path, seed: u64) -> Result<RunManifest> {
    let started = Instant::now();
    let mut out = OutputDir::create(out_dir)?;
    let calib = calibrator(out_dir);
    let s = scale.settings();
    match preset {
        Preset::Table1 | Preset::Table2 => {
            let (table, regime): (&[ReferenceRow], fn(f64) -> Regime) = match preset {
                Preset::Table1 => (&TABLE1, Regime::table1),
                _ => (&TABLE2, Regime::table2),
            };
            let regimes: Vec<_> = table.iter().map(|r| regime(r.f_y)).collect();
            let params = params_for(&regimes, &calib)?;
            let moments = presets::moments_table(&params, &s, seed)?;
            let csv = comparison_csv(&params, &moments, table)
                .meta("preset", preset)
                .meta("scale", scale)
                .meta("dt", s.dt)
                .meta("t_spinup", s.t_spinup)
                .meta("t_window", s.t_window)
                .meta("seed", seed);
            out.write("moments.csv", &csv.render())?;
        }
        Preset::Fig2 => {
            let regimes: Vec<_> = FIG_FORCINGS.iter().map(|&f| Regime::table1(f)).collect();
            let params = params_for(&regimes, &calib)?;
            let protocol = scale.divergence_protocol(regimes[0].epsilon, seed);
            let sweep = presets::divergence_sweep(&params, s.dt, &protocol)?;
            let meta = |c: Csv| c.meta("preset", preset).meta("scale", scale).meta("dt", s.dt);
            out.write(
                "uncoupled/divergence.csv",
                &meta(divergence_csv(&sweep.uncoupled)).render(),
            )?;
            for (f_y, prof) in &sweep.coupled {
                out.write(
                    format!("{}/divergence.csv", regime_dir(*f_y)),
                    &meta(divergence_csv(prof)).meta("F_y", f_y).render(),
                )?;
            }
        }
        Preset::Fig4 => {
            let regimes: Vec<_> = FIG_FORCINGS.iter().map(|&f| Regime::table1(f)).collect();
            let params = params_for(&regimes, &calib)?;
            let settings = ResponseSweepSettings {
                slow_mean_dt: s.dt,
                slow_mean_window: 0.1 * s.t_window,
                ..ResponseSweepSettings::default()
            };
            let (horizon, rows) = presets::response_sweep(&params, &settings, seed)?;
            let table: Vec<_> = rows
                .iter()
                .map(|r| (r.f_y, r.x_bar, r.operator.t_max, &r.diagnostic))
                .collect();
            let csv = diagnostic_csv(&table)
                .meta("preset", preset)
                .meta("scale", scale)
                .meta("horizon", horizon)
                .meta("t_run", settings.t_run);
            out.write("diagnostic.csv", &csv.render())?;
            for r in &rows {
                out.write(
                    format!("{}/response_operator.csv", regime_dir(r.f_y)),
                    &operator_csv(&r.operator, &r.diagnostic)
                        .meta("F_y", r.f_y)
                        .render(),
                )?;
            }
        }
    }
    RunManifest::finish(
        &out,
        &format!("reproduce {preset} {scale}"),
        &format!("{preset} {scale} {seed}"),
        Seeds {
            integrator: seed,
            calibration: CalibrationSettings::default().seed,
        },
        started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names() {
        for p in Preset::ALL {
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
        assert!(matches!("fig3".parse::<Preset>(), Err(Error::Validation(_))));
    }
}
