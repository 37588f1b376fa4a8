//! Parses an experiment file and runs it the way the command-line tool does.

use slowfast::cli::config::ExperimentConfig;
use slowfast::cli::run::run;

const CONFIG: &str = "
[model]
f_y = 12

[calibration]
t_total = 300
cache = calibrations.txt

[integrator]
dt = 1e-4
seed = 3

[experiment]
kind = stats
t_spinup = 2
t_window = 10
pdf_bins = 20
acf_max_lag = 2
";

fn main() -> slowfast::Result<()> {
    let dir = std::env::temp_dir().join("slowfast-config-run");
    let mut cfg = ExperimentConfig::parse(CONFIG, None)?;
    cfg.output_dir = dir.clone();
    let manifest = run(&cfg)?;
    for f in &manifest.files {
        println!("{:<16} {} bytes  {}", f.path, f.bytes, &f.sha256[..12]);
    }
    print!("{}", std::fs::read_to_string(dir.join("moments.csv"))?);
    Ok(())
}
