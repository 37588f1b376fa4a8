//! Regenerates one bundled table or figure. Desk scale takes minutes.
//!
//! cargo run --release --example reproduce -- fig4 [desk|paper] [out-dir]

use slowfast::cli::reproduce::{reproduce, Preset};
use slowfast::presets::Scale;

fn main() -> slowfast::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset: Preset = args.first().map_or("fig4", String::as_str).parse()?;
    let scale: Scale = args.get(1).map_or("desk", String::as_str).parse()?;
    let out = args.get(2).cloned().unwrap_or_else(|| format!("out/{preset}"));
    let m = reproduce(preset, scale, out.as_ref(), 0)?;
    println!("{} files in {out} after {:.1} s", m.files.len(), m.wall_clock_seconds);
    Ok(())
}
