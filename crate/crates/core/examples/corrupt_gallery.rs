//! Write every corruption of a rendered frame at one severity as PNGs.
//!
//! Usage: `cargo run --example corrupt_gallery -- <out_dir> [severity]`

use std::path::PathBuf;

use sfmk::pipeline::image_io::save_rgb;
use sfmk::pipeline::{synth_scene, SceneConfig};
use sfmk::robust::{corrupt, CorruptionSpec};

fn main() -> sfmk::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "corruptions".into()));
    let severity: u8 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    std::fs::create_dir_all(&out).map_err(|e| sfmk::Error::io(&out, e))?;
    let image = synth_scene(&SceneConfig::desk())?.target;
    save_rgb(&out.join("clean.png"), &image)?;
    for spec in CorruptionSpec::all(severity)? {
        let x = corrupt(&image, &spec, 0)?;
        let diff = x.zip_map(&image, |a, b| (a - b).abs())?.mean();
        println!("{:<18} mean |change| {diff:.4}", spec.kind.name());
        save_rgb(&out.join(format!("{}.png", spec.kind)), &x)?;
    }
    Ok(())
}
