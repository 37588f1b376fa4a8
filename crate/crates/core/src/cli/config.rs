//! Experiment configuration files.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Sections are `model`, `calibration`, `integrator`, `experiment` and `output`.
//! Lists are comma separated. Every key is optional and falls back to the
//! desk-scale default; unknown sections and keys are rejected with their line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::calibrate::CalibrationSettings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Calibrate,
    Simulate,
    Divergence,
    Response,
    Stats,
    EnergyCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Calibrate,
        ExperimentKind::Simulate,
        ExperimentKind::Divergence,
        ExperimentKind::Response,
        ExperimentKind::Stats,
        ExperimentKind::EnergyCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Calibrate => "calibrate",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Divergence => "divergence",
            ExperimentKind::Response => "response",
            ExperimentKind::Stats => "stats",
            ExperimentKind::EnergyCheck => "energy-check",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Calibrate => &[],
            ExperimentKind::Simulate => &["t_spinup", "t_len"],
            ExperimentKind::Divergence => &[
                "f_y_values",
                "t_spinup",
                "members",
                "spacing",
                "horizon",
                "delta",
                "window",
                "sample_dt",
                "uncoupled",
            ],
            ExperimentKind::Response => &[
                "f_y_values",
                "estimator",
                "t_run",
                "t_spinup",
                "max_lag",
                "x_bar",
                "t_max",
                "threshold",
                "lookahead",
                "cap",
                "noise_multiple",
                "batches",
                "shift_symmetrize",
                "n_samples",
                "t_spacing",
                "curve_stride",
            ],
            ExperimentKind::Stats => &[
                "t_spinup",
                "t_window",
                "pdf_bins",
                "pdf_lo",
                "pdf_hi",
                "acf_max_lag",
            ],
            ExperimentKind::EnergyCheck => &["t_len"],
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub n_x: usize,
    pub j: usize,
    pub f_x: f64,
    pub f_y: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub epsilon: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            n_x: 10,
            j: 4,
            f_x: 6.0,
            f_y: 6.0,
            lambda_x: 0.25,
            lambda_y: 0.25,
            epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationBlock {
    pub settings: CalibrationSettings,
    /// Cache file, relative to the output directory.
    pub cache: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorBlock {
    pub dt: f64,
    pub sample_stride: usize,
    pub seed: u64,
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            sample_stride: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    QuasiGaussian,
    TangentExact,
}

impl EstimatorChoice {
    fn name(self) -> &'static str {
        match self {
            EstimatorChoice::QuasiGaussian => "quasi-gaussian",
            EstimatorChoice::TangentExact => "tangent-exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentBlock {
    Calibrate,
    Simulate {
        t_spinup: f64,
        t_len: f64,
    },
    Divergence {
        f_y_values: Vec<f64>,
        t_spinup: f64,
        members: usize,
        spacing: f64,
        horizon: f64,
        delta: f64,
        window: f64,
        sample_dt: f64,
        uncoupled: bool,
    },
    Response {
        f_y_values: Vec<f64>,
        estimator: EstimatorChoice,
        t_run: f64,
        t_spinup: f64,
        max_lag: f64,
        x_bar: Option<f64>,
        t_max: Option<f64>,
        threshold: f64,
        lookahead: f64,
        cap: f64,
        noise_multiple: f64,
        batches: usize,
        shift_symmetrize: bool,
        n_samples: usize,
        t_spacing: f64,
        curve_stride: usize,
    },
    Stats {
        t_spinup: f64,
        t_window: f64,
        pdf_bins: usize,
        pdf_lo: f64,
        pdf_hi: f64,
        acf_max_lag: f64,
    },
    EnergyCheck {
        t_len: f64,
    },
}

impl ExperimentBlock {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentBlock::Calibrate => ExperimentKind::Calibrate,
            ExperimentBlock::Simulate { .. } => ExperimentKind::Simulate,
            ExperimentBlock::Divergence { .. } => ExperimentKind::Divergence,
            ExperimentBlock::Response { .. } => ExperimentKind::Response,
            ExperimentBlock::Stats { .. } => ExperimentKind::Stats,
            ExperimentBlock::EnergyCheck { .. } => ExperimentKind::EnergyCheck,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub calibration: CalibrationBlock,
    pub integrator: IntegratorBlock,
    pub experiment: ExperimentBlock,
    pub output_dir: PathBuf,
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

const SECTIONS: [&str; 5] = ["model", "calibration", "integrator", "experiment", "output"];

fn tokenize(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(name) = s.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("unterminated section header `{s}`"),
                })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown section `{name}`"),
                });
            }
            if sections.contains_key(name) {
                return Err(Error::Parse {
                    line,
                    message: format!("section `{name}` appears twice"),
                });
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = s.split_once('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected `key = value`, found `{s}`"),
            });
        };
        let section = current.as_ref().ok_or_else(|| Error::Parse {
            line,
            message: "key outside of any section".into(),
        })?;
        let key = key.trim().to_string();
        let entries = sections.get_mut(section).unwrap();
        if entries.contains_key(&key) {
            return Err(Error::Parse {
                line,
                message: format!("key `{key}` appears twice"),
            });
        }
        entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

/// Typed reads from one section; every key must be in `allowed`.
struct Reader<'a> {
    name: &'static str,
    entries: Option<&'a BTreeMap<String, Entry>>,
}

impl<'a> Reader<'a> {
    fn new(sections: &'a Sections, name: &'static str, allowed: &[&str]) -> Result<Self> {
        let entries = sections.get(name);
        if let Some(e) = entries {
            // report the earliest offending line
            let mut unknown: Vec<(&String, &Entry)> =
                e.iter().filter(|(k, _)| !allowed.contains(&k.as_str())).collect();
            unknown.sort_by_key(|(_, v)| v.line);
            if let Some((k, v)) = unknown.first() {
                return Err(Error::UnknownKey {
                    section: name.to_string(),
                    key: k.to_string(),
                    line: v.line,
                });
            }
        }
        Ok(Self { name, entries })
    }

    fn raw(&self, key: &str) -> Option<&'a Entry> {
        self.entries.and_then(|e| e.get(key))
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|err| Error::Parse {
                line: e.line,
                message: format!("[{}] {key}: {err}", self.name),
            }),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(e) if e.value == "none" => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|err| Error::Parse {
                line: e.line,
                message: format!("[{}] {key}: {err}", self.name),
            }),
        }
    }

    fn list(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => e
                .value
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|err| Error::Parse {
                        line: e.line,
                        message: format!("[{}] {key}: {err}", self.name),
                    })
                })
                .collect(),
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        self.raw(key).map(|e| e.value.clone())
    }
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let experiment = match kind {
            ExperimentKind::Calibrate => ExperimentBlock::Calibrate,
            ExperimentKind::Simulate => ExperimentBlock::Simulate {
                t_spinup: 200.0,
                t_len: 100.0,
            },
            ExperimentKind::Divergence => ExperimentBlock::Divergence {
                f_y_values: vec![6.0],
                t_spinup: 200.0,
                members: 100,
                spacing: 20.0,
                horizon: 25.0,
                delta: 0.01,
                window: 0.5,
                sample_dt: 0.01,
                uncoupled: true,
            },
            ExperimentKind::Response => ExperimentBlock::Response {
                f_y_values: vec![6.0],
                estimator: EstimatorChoice::QuasiGaussian,
                t_run: 2000.0,
                t_spinup: 50.0,
                max_lag: 12.0,
                x_bar: None,
                t_max: None,
                threshold: 0.02,
                lookahead: 1.0,
                cap: 50.0,
                noise_multiple: 3.0,
                batches: 10,
                shift_symmetrize: true,
                n_samples: 200,
                t_spacing: 5.0,
                curve_stride: 10,
            },
            ExperimentKind::Stats => ExperimentBlock::Stats {
                t_spinup: 200.0,
                t_window: 2000.0,
                pdf_bins: 100,
                pdf_lo: -5.0,
                pdf_hi: 5.0,
                acf_max_lag: 10.0,
            },
            ExperimentKind::EnergyCheck => ExperimentBlock::EnergyCheck { t_len: 1.0 },
        };
        let integrator = match kind {
            ExperimentKind::Response => IntegratorBlock {
                dt: 1e-3,
                sample_stride: 10,
                seed: 0,
            },
            ExperimentKind::EnergyCheck => IntegratorBlock {
                dt: 1e-5,
                sample_stride: 1,
                seed: 0,
            },
            _ => IntegratorBlock::default(),
        };
        Self {
            model: ModelBlock::default(),
            calibration: CalibrationBlock::default(),
            integrator,
            experiment,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Parses and validates. `expected` fills in a missing `kind` and must agree
    /// with one that is present.
    pub fn parse(text: &str, expected: Option<ExperimentKind>) -> Result<Self> {
        let sections = tokenize(text)?;
        let exp_kind_entry = sections.get("experiment").and_then(|e| e.get("kind"));
        let kind = match (exp_kind_entry, expected) {
            (Some(e), exp) => {
                let k: ExperimentKind = e.value.parse().map_err(|message| Error::Parse {
                    line: e.line,
                    message,
                })?;
                if let Some(x) = exp {
                    if x != k {
                        return Err(Error::Validation(format!(
                            "config describes a `{}` experiment, not `{}`",
                            k.name(),
                            x.name()
                        )));
                    }
                }
                k
            }
            (None, Some(k)) => k,
            (None, None) => {
                return Err(Error::Validation("[experiment] kind is required".into()));
            }
        };
        let d = Self::default_for(kind);

        let m = Reader::new(
            &sections,
            "model",
            &["n_x", "j", "f_x", "f_y", "lambda_x", "lambda_y", "epsilon"],
        )?;
        let model = ModelBlock {
            n_x: m.get("n_x", d.model.n_x)?,
            j: m.get("j", d.model.j)?,
            f_x: m.get("f_x", d.model.f_x)?,
            f_y: m.get("f_y", d.model.f_y)?,
            lambda_x: m.get("lambda_x", d.model.lambda_x)?,
            lambda_y: m.get("lambda_y", d.model.lambda_y)?,
            epsilon: m.get("epsilon", d.model.epsilon)?,
        };

        let c = Reader::new(
            &sections,
            "calibration",
            &["dt", "t_total", "t_spinup", "seed", "cache"],
        )?;
        let cs = d.calibration.settings;
        let calibration = CalibrationBlock {
            settings: CalibrationSettings {
                dt: c.get("dt", cs.dt)?,
                t_total: c.get("t_total", cs.t_total)?,
                t_spinup: c.get("t_spinup", cs.t_spinup)?,
                seed: c.get("seed", cs.seed)?,
            },
            cache: c.string("cache"),
        };

        let g = Reader::new(&sections, "integrator", &["dt", "sample_stride", "seed"])?;
        let integrator = IntegratorBlock {
            dt: g.get("dt", d.integrator.dt)?,
            sample_stride: g.get("sample_stride", d.integrator.sample_stride)?,
            seed: g.get("seed", d.integrator.seed)?,
        };

        let mut allowed = vec!["kind"];
        allowed.extend_from_slice(kind.keys());
        let e = Reader::new(&sections, "experiment", &allowed)?;
        let experiment = match d.experiment {
            ExperimentBlock::Calibrate => ExperimentBlock::Calibrate,
            ExperimentBlock::Simulate { t_spinup, t_len } => ExperimentBlock::Simulate {
                t_spinup: e.get("t_spinup", t_spinup)?,
                t_len: e.get("t_len", t_len)?,
            },
            ExperimentBlock::Divergence {
                f_y_values,
                t_spinup,
                members,
                spacing,
                horizon,
                delta,
                window,
                sample_dt,
                uncoupled,
            } => ExperimentBlock::Divergence {
                f_y_values: e.list("f_y_values", f_y_values)?,
                t_spinup: e.get("t_spinup", t_spinup)?,
                members: e.get("members", members)?,
                spacing: e.get("spacing", spacing)?,
                horizon: e.get("horizon", horizon)?,
                delta: e.get("delta", delta)?,
                window: e.get("window", window)?,
                sample_dt: e.get("sample_dt", sample_dt)?,
                uncoupled: e.get("uncoupled", uncoupled)?,
            },
            ExperimentBlock::Response {
                f_y_values,
                t_run,
                t_spinup,
                max_lag,
                threshold,
                lookahead,
                cap,
                noise_multiple,
                batches,
                shift_symmetrize,
                n_samples,
                t_spacing,
                curve_stride,
                ..
            } => ExperimentBlock::Response {
                f_y_values: e.list("f_y_values", f_y_values)?,
                estimator: match e.raw("estimator") {
                    None => EstimatorChoice::QuasiGaussian,
                    Some(v) => match v.value.as_str() {
                        "quasi-gaussian" => EstimatorChoice::QuasiGaussian,
                        "tangent-exact" => EstimatorChoice::TangentExact,
                        other => {
                            return Err(Error::Parse {
                                line: v.line,
                                message: format!("unknown estimator `{other}`"),
                            })
                        }
                    },
                },
                t_run: e.get("t_run", t_run)?,
                t_spinup: e.get("t_spinup", t_spinup)?,
                max_lag: e.get("max_lag", max_lag)?,
                x_bar: e.opt("x_bar")?,
                t_max: e.opt("t_max")?,
                threshold: e.get("threshold", threshold)?,
                lookahead: e.get("lookahead", lookahead)?,
                cap: e.get("cap", cap)?,
                noise_multiple: e.get("noise_multiple", noise_multiple)?,
                batches: e.get("batches", batches)?,
                shift_symmetrize: e.get("shift_symmetrize", shift_symmetrize)?,
                n_samples: e.get("n_samples", n_samples)?,
                t_spacing: e.get("t_spacing", t_spacing)?,
                curve_stride: e.get("curve_stride", curve_stride)?,
            },
            ExperimentBlock::Stats {
                t_spinup,
                t_window,
                pdf_bins,
                pdf_lo,
                pdf_hi,
                acf_max_lag,
            } => ExperimentBlock::Stats {
                t_spinup: e.get("t_spinup", t_spinup)?,
                t_window: e.get("t_window", t_window)?,
                pdf_bins: e.get("pdf_bins", pdf_bins)?,
                pdf_lo: e.get("pdf_lo", pdf_lo)?,
                pdf_hi: e.get("pdf_hi", pdf_hi)?,
                acf_max_lag: e.get("acf_max_lag", acf_max_lag)?,
            },
            ExperimentBlock::EnergyCheck { t_len } => ExperimentBlock::EnergyCheck {
                t_len: e.get("t_len", t_len)?,
            },
        };

        let o = Reader::new(&sections, "output", &["dir"])?;
        let output_dir = o
            .string("dir")
            .map(PathBuf::from)
            .unwrap_or(d.output_dir);

        let cfg = Self {
            model,
            calibration,
            integrator,
            experiment,
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, expected: Option<ExperimentKind>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, expected)
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind()
    }

    /// Values every experiment ultimately needs to be meaningful.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        let m = &self.model;
        if m.n_x < crate::dynamics::MIN_RING {
            return bad(format!("[model] n_x must be at least 4, got {}", m.n_x));
        }
        if m.j == 0 {
            return bad("[model] j must be positive".into());
        }
        if !(m.epsilon > 0.0) {
            return bad(format!("[model] epsilon must be positive, got {}", m.epsilon));
        }
        for (k, v) in [("lambda_x", m.lambda_x), ("lambda_y", m.lambda_y)] {
            if !(v >= 0.0) {
                return bad(format!("[model] {k} must be non-negative, got {v}"));
            }
        }
        for (k, v) in [("f_x", m.f_x), ("f_y", m.f_y)] {
            if !v.is_finite() {
                return bad(format!("[model] {k} must be finite"));
            }
        }
        let c = &self.calibration.settings;
        if !(c.dt > 0.0) || !(c.t_total > 0.0) || !(c.t_spinup >= 0.0) {
            return bad("[calibration] needs dt > 0, t_total > 0, t_spinup >= 0".into());
        }
        if let Some(cache) = &self.calibration.cache {
            let p = Path::new(cache);
            if p.is_absolute() || p.components().any(|c| c == std::path::Component::ParentDir) {
                return bad(format!(
                    "[calibration] cache must stay inside the output directory, got `{cache}`"
                ));
            }
        }
        if !(self.integrator.dt > 0.0) {
            return bad(format!("[integrator] dt must be positive, got {}", self.integrator.dt));
        }
        if self.integrator.sample_stride == 0 {
            return bad("[integrator] sample_stride must be at least 1".into());
        }
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("[experiment] {name} must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| -> Result<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "[experiment] {name} must be non-negative, got {v}"
                )))
            }
        };
        match &self.experiment {
            ExperimentBlock::Calibrate => {}
            ExperimentBlock::Simulate { t_spinup, t_len } => {
                non_negative("t_spinup", *t_spinup)?;
                positive("t_len", *t_len)?;
            }
            ExperimentBlock::Divergence {
                f_y_values,
                t_spinup,
                members,
                spacing,
                horizon,
                delta,
                window,
                sample_dt,
                ..
            } => {
                if f_y_values.is_empty() {
                    return bad("[experiment] f_y_values is empty".into());
                }
                non_negative("t_spinup", *t_spinup)?;
                if *members == 0 {
                    return bad("[experiment] members must be at least 1".into());
                }
                positive("spacing", *spacing)?;
                positive("horizon", *horizon)?;
                non_negative("delta", *delta)?;
                positive("window", *window)?;
                positive("sample_dt", *sample_dt)?;
            }
            ExperimentBlock::Response {
                f_y_values,
                t_run,
                t_spinup,
                max_lag,
                t_max,
                threshold,
                lookahead,
                cap,
                noise_multiple,
                batches,
                n_samples,
                t_spacing,
                curve_stride,
                ..
            } => {
                if f_y_values.is_empty() {
                    return bad("[experiment] f_y_values is empty".into());
                }
                positive("t_run", *t_run)?;
                non_negative("t_spinup", *t_spinup)?;
                positive("max_lag", *max_lag)?;
                if let Some(t) = t_max {
                    positive("t_max", *t)?;
                    if t > max_lag {
                        return bad(format!("[experiment] t_max {t} exceeds max_lag {max_lag}"));
                    }
                }
                positive("threshold", *threshold)?;
                non_negative("lookahead", *lookahead)?;
                positive("cap", *cap)?;
                non_negative("noise_multiple", *noise_multiple)?;
                if *batches < 2 {
                    return bad("[experiment] batches must be at least 2".into());
                }
                if *n_samples == 0 || *curve_stride == 0 {
                    return bad("[experiment] n_samples and curve_stride must be positive".into());
                }
                positive("t_spacing", *t_spacing)?;
            }
            ExperimentBlock::Stats {
                t_spinup,
                t_window,
                pdf_bins,
                pdf_lo,
                pdf_hi,
                acf_max_lag,
            } => {
                non_negative("t_spinup", *t_spinup)?;
                positive("t_window", *t_window)?;
                if *pdf_bins < 2 || !(pdf_lo < pdf_hi) {
                    return bad("[experiment] pdf needs pdf_bins >= 2 and pdf_lo < pdf_hi".into());
                }
                positive("acf_max_lag", *acf_max_lag)?;
            }
            ExperimentBlock::EnergyCheck { t_len } => positive("t_len", *t_len)?,
        }
        Ok(())
    }

    /// Reapplies a seed to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.integrator.seed = seed;
        self.calibration.settings.seed = seed;
        self
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "n_x = {}", m.n_x);
        let _ = writeln!(s, "j = {}", m.j);
        let _ = writeln!(s, "f_x = {}", m.f_x);
        let _ = writeln!(s, "f_y = {}", m.f_y);
        let _ = writeln!(s, "lambda_x = {}", m.lambda_x);
        let _ = writeln!(s, "lambda_y = {}", m.lambda_y);
        let _ = writeln!(s, "epsilon = {}", m.epsilon);
        let c = &self.calibration.settings;
        let _ = writeln!(s, "\n[calibration]");
        let _ = writeln!(s, "dt = {}", c.dt);
        let _ = writeln!(s, "t_total = {}", c.t_total);
        let _ = writeln!(s, "t_spinup = {}", c.t_spinup);
        let _ = writeln!(s, "seed = {}", c.seed);
        if let Some(cache) = &self.calibration.cache {
            let _ = writeln!(s, "cache = {cache}");
        }
        let g = &self.integrator;
        let _ = writeln!(s, "\n[integrator]");
        let _ = writeln!(s, "dt = {}", g.dt);
        let _ = writeln!(s, "sample_stride = {}", g.sample_stride);
        let _ = writeln!(s, "seed = {}", g.seed);
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "kind = {}", self.kind().name());
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let opt = |v: &Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        match &self.experiment {
            ExperimentBlock::Calibrate => {}
            ExperimentBlock::Simulate { t_spinup, t_len } => {
                let _ = writeln!(s, "t_spinup = {t_spinup}");
                let _ = writeln!(s, "t_len = {t_len}");
            }
            ExperimentBlock::Divergence {
                f_y_values,
                t_spinup,
                members,
                spacing,
                horizon,
                delta,
                window,
                sample_dt,
                uncoupled,
            } => {
                let _ = writeln!(s, "f_y_values = {}", list(f_y_values));
                let _ = writeln!(s, "t_spinup = {t_spinup}");
                let _ = writeln!(s, "members = {members}");
                let _ = writeln!(s, "spacing = {spacing}");
                let _ = writeln!(s, "horizon = {horizon}");
                let _ = writeln!(s, "delta = {delta}");
                let _ = writeln!(s, "window = {window}");
                let _ = writeln!(s, "sample_dt = {sample_dt}");
                let _ = writeln!(s, "uncoupled = {uncoupled}");
            }
            ExperimentBlock::Response {
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
            } => {
                let _ = writeln!(s, "f_y_values = {}", list(f_y_values));
                let _ = writeln!(s, "estimator = {}", estimator.name());
                let _ = writeln!(s, "t_run = {t_run}");
                let _ = writeln!(s, "t_spinup = {t_spinup}");
                let _ = writeln!(s, "max_lag = {max_lag}");
                let _ = writeln!(s, "x_bar = {}", opt(x_bar));
                let _ = writeln!(s, "t_max = {}", opt(t_max));
                let _ = writeln!(s, "threshold = {threshold}");
                let _ = writeln!(s, "lookahead = {lookahead}");
                let _ = writeln!(s, "cap = {cap}");
                let _ = writeln!(s, "noise_multiple = {noise_multiple}");
                let _ = writeln!(s, "batches = {batches}");
                let _ = writeln!(s, "shift_symmetrize = {shift_symmetrize}");
                let _ = writeln!(s, "n_samples = {n_samples}");
                let _ = writeln!(s, "t_spacing = {t_spacing}");
                let _ = writeln!(s, "curve_stride = {curve_stride}");
            }
            ExperimentBlock::Stats {
                t_spinup,
                t_window,
                pdf_bins,
                pdf_lo,
                pdf_hi,
                acf_max_lag,
            } => {
                let _ = writeln!(s, "t_spinup = {t_spinup}");
                let _ = writeln!(s, "t_window = {t_window}");
                let _ = writeln!(s, "pdf_bins = {pdf_bins}");
                let _ = writeln!(s, "pdf_lo = {pdf_lo}");
                let _ = writeln!(s, "pdf_hi = {pdf_hi}");
                let _ = writeln!(s, "acf_max_lag = {acf_max_lag}");
            }
            ExperimentBlock::EnergyCheck { t_len } => {
                let _ = writeln!(s, "t_len = {t_len}");
            }
        }
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output_dir.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_for_every_kind() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::default_for(kind);
            let back = ExperimentConfig::parse(&cfg.to_text(), None).unwrap();
            assert_eq!(back, cfg, "{}", kind.name());
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "[model]\nn_x = 10\nlamda_x = 0.3\n[experiment]\nkind = stats\n";
        match ExperimentConfig::parse(text, None) {
            Err(Error::UnknownKey { section, key, line }) => {
                assert_eq!((section.as_str(), key.as_str(), line), ("model", "lamda_x", 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keys_of_other_experiments_are_unknown() {
        let text = "[experiment]\nkind = energy-check\nmembers = 3\n";
        assert!(matches!(
            ExperimentConfig::parse(text, None),
            Err(Error::UnknownKey { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_lines_are_parse_errors() {
        for (text, line) in [
            ("[model\n", 1),
            ("n_x = 3\n", 1),
            ("[model]\nn_x 10\n", 2),
            ("[model]\nn_x = ten\n", 2),
            ("[model]\nn_x = 10\nn_x = 12\n", 3),
            ("[models]\n", 1),
        ] {
            match ExperimentConfig::parse(text, Some(ExperimentKind::Stats)) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn validation_errors() {
        let kind = Some(ExperimentKind::Divergence);
        for text in [
            "[model]\nepsilon = 0\n",
            "[model]\nn_x = 3\n",
            "[integrator]\nsample_stride = 0\n",
            "[experiment]\nmembers = 0\n",
            "[calibration]\ncache = ../escape.txt\n",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(text, kind), Err(Error::Validation(_))),
                "{text}"
            );
        }
        assert!(matches!(
            ExperimentConfig::parse("[experiment]\nkind = stats\n", kind),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn overrides_and_lists() {
        let text = "[experiment]\nkind = response\nf_y_values = 6, 24\nx_bar = none\nt_max = 4.5\n";
        let cfg = ExperimentConfig::parse(text, Some(ExperimentKind::Response)).unwrap();
        match &cfg.experiment {
            ExperimentBlock::Response {
                f_y_values,
                x_bar,
                t_max,
                ..
            } => {
                assert_eq!(f_y_values, &[6.0, 24.0]);
                assert_eq!(*x_bar, None);
                assert_eq!(*t_max, Some(4.5));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ExperimentConfig::parse(&cfg.to_text(), None).unwrap(), cfg);
    }
}
